// SPDX-License-Identifier: Apache-2.0

#include "ctad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctad/geometry.hpp"
#include "ctad/model.hpp"
#include "ctad/nn.hpp"
#include "ctad/objective.hpp"
#include "ctad/refiner.hpp"

namespace ctad {

double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs, Rng& rng,
                 const GradcheckOptions& options) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const Tensor out = f(inputs);
  const Tensor proj(out.shape(), rng.uniform_values(out.numel(), -1, 1));
  backward(sum(mul(out, proj)));

  auto objective = [&]() {
    const Tensor y = f(inputs);
    double s = 0;
    const auto yv = y.data();
    const auto pv = proj.data();
    for (std::size_t i = 0; i < yv.size(); ++i) s += static_cast<double>(yv[i]) * pv[i];
    return s;
  };

  NoGradGuard no_grad;
  double max_diff = 0, max_a = 0, max_n = 0;
  for (auto& t : inputs) {
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords > 0 && coords.size() > options.max_coords) {
      for (std::size_t i = 0; i < options.max_coords; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(options.max_coords);
    }
    auto data = t.data_mut();
    for (std::size_t i : coords) {
      const Scalar x = data[i];
      data[i] = static_cast<Scalar>(x + options.step);
      const double lp = objective();
      data[i] = static_cast<Scalar>(x - options.step);
      const double lm = objective();
      data[i] = x;
      const double numeric = (lp - lm) / (2 * options.step);
      const double analytic = t.has_grad() ? static_cast<double>(t.grad()[i]) : 0.0;
      max_diff = std::max(max_diff, std::abs(analytic - numeric));
      max_a = std::max(max_a, std::abs(analytic));
      max_n = std::max(max_n, std::abs(numeric));
    }
  }
  return max_diff / std::max({max_a, max_n, 1e-10});
}

double GradcheckReport::max_rel_error() const {
  double m = 0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

Tensor rand_tensor(Rng& rng, Shape shape, double lo = -1, double hi = 1) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), rng.uniform_values(n, lo, hi));
}

// Magnitudes in [0.1, 1] with random sign, keeping inputs away from kinks at 0.
Tensor away_from_zero(Rng& rng, Shape shape) {
  Tensor t = rand_tensor(rng, std::move(shape), 0.1, 1.0);
  for (auto& v : t.data_mut()) {
    if (rng.uniform() < 0.5) v = -v;
  }
  return t;
}

Mask random_mask(Rng& rng, int h, int w) {
  Mask m(h, w, false);
  for (auto& v : m.values) v = rng.uniform() < 0.7 ? 1 : 0;
  m.values[0] = 1;
  return m;
}

Camera small_camera(Rng& rng, int h, int w) {
  Camera c;
  c.fx = rng.uniform(0.8, 1.2) * w;
  c.fy = rng.uniform(0.8, 1.2) * w;
  c.cx = (w - 1) / 2.0 + rng.uniform(-0.3, 0.3);
  c.cy = (h - 1) / 2.0 + rng.uniform(-0.3, 0.3);
  c.width = w;
  c.height = h;
  return c;
}

Tensor small_twist(Rng& rng, double rot, double trans) {
  std::vector<Scalar> v(6);
  for (int k = 0; k < 3; ++k) v[k] = static_cast<Scalar>(rng.uniform(-rot, rot));
  for (int k = 3; k < 6; ++k) v[k] = static_cast<Scalar>(rng.uniform(-trans, trans));
  return Tensor(Shape{6}, v);
}

// Smooth feature map so bilinear sampling sees well-conditioned gradients.
Tensor smooth_features(Rng& rng, int c, int h, int w) {
  std::vector<Scalar> v(std::size_t(c) * h * w);
  for (int ch = 0; ch < c; ++ch) {
    const double a = rng.uniform(0.3, 0.9), b = rng.uniform(0.3, 0.9), p = rng.uniform(0, 6.28);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        v[(std::size_t(ch) * h + y) * w + x] = static_cast<Scalar>(std::sin(a * x + p) * std::cos(b * y) +
                                                                    0.3 * rng.uniform(-1, 1));
  }
  return Tensor(Shape{c, h, w}, v);
}

std::vector<Tensor> params_of(const ParamStore& store) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : store.entries()) out.push_back(t);
  return out;
}

// Perturbs zero-initialized tensors so their downstream paths are exercised.
void randomize(ParamStore& store, Rng& rng, double scale) {
  for (const auto& [name, t] : store.entries()) {
    Tensor h = t;
    for (auto& v : h.data_mut()) v = static_cast<Scalar>(v + rng.uniform(-scale, scale));
  }
}

template <class Case>
GradcheckEntry run(const std::string& name, int trials, Rng& rng, Case&& make_case) {
  GradcheckEntry e{name, trials, 0};
  for (int t = 0; t < trials; ++t) e.max_rel_error = std::max(e.max_rel_error, make_case(rng));
  return e;
}

}  // namespace

GradcheckReport run_gradcheck_suite(std::uint64_t seed, int trials) {
  GradcheckReport rep;
  Rng rng(seed);
  auto unary = [&](const std::string& name, auto op, auto make_input) {
    rep.entries.push_back(run(name, trials, rng, [&](Rng& r) {
      Tensor x = make_input(r);
      return gradcheck([&](const std::vector<Tensor>&) { return op(x); }, {x}, r);
    }));
  };
  auto binary = [&](const std::string& name, auto op, auto make_a, auto make_b) {
    rep.entries.push_back(run(name, trials, rng, [&](Rng& r) {
      Tensor a = make_a(r), b = make_b(r);
      return gradcheck([&](const std::vector<Tensor>&) { return op(a, b); }, {a, b}, r);
    }));
  };
  const auto any = [](Rng& r) { return rand_tensor(r, {2, 3, 4}); };
  const auto nonzero = [](Rng& r) { return away_from_zero(r, {2, 3, 4}); };
  const auto positive = [](Rng& r) { return rand_tensor(r, {2, 3, 4}, 0.5, 2.0); };

  binary("add", [](const Tensor& a, const Tensor& b) { return add(a, b); }, any, any);
  binary("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }, any, any);
  binary("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, any, any);
  binary("div", [](const Tensor& a, const Tensor& b) { return div(a, b); }, any, positive);
  binary("mul_by_scalar_tensor", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, any,
         [](Rng& r) { return rand_tensor(r, {1}); });
  unary("add_scalar", [](const Tensor& x) { return add_scalar(x, 0.7); }, any);
  unary("mul_scalar", [](const Tensor& x) { return mul_scalar(x, -1.3); }, any);
  unary("neg", [](const Tensor& x) { return neg(x); }, any);
  unary("relu", [](const Tensor& x) { return relu(x); }, nonzero);
  unary("tanh", [](const Tensor& x) { return tanh(x); }, any);
  unary("sigmoid", [](const Tensor& x) { return sigmoid(x); }, any);
  unary("softplus", [](const Tensor& x) { return softplus(mul_scalar(x, 3)); }, any);
  unary("exp", [](const Tensor& x) { return exp(x); }, any);
  unary("log", [](const Tensor& x) { return log(x); }, positive);
  unary("abs", [](const Tensor& x) { return abs(x); }, nonzero);
  unary("sqrt", [](const Tensor& x) { return sqrt(x); }, positive);
  unary("clamp", [](const Tensor& x) { return clamp(x, -0.55, 0.55); }, nonzero);
  unary("clamp_interior", [](const Tensor& x) { return clamp(x, -2, 2); }, any);
  unary("sum", [](const Tensor& x) { return sum(x); }, any);
  unary("mean", [](const Tensor& x) { return mean(x); }, any);
  unary("l1_norm", [](const Tensor& x) { return l1_norm(x); }, nonzero);
  unary("channel_l2_norm", [](const Tensor& x) { return channel_l2_norm(x); }, nonzero);
  unary("channel_sum", [](const Tensor& x) { return channel_sum(x); }, any);
  {
    Rng mr(seed + 1);
    const Mask mask = random_mask(mr, 3, 4);
    unary("masked_mean", [&](const Tensor& x) { return masked_mean(x, mask); }, any);
    unary("apply_mask", [&](const Tensor& x) { return apply_mask(x, mask); }, any);
  }
  unary("reshape", [](const Tensor& x) { return reshape(x, {4, 6}); }, any);
  unary("transpose", [](const Tensor& x) { return transpose(reshape(x, {4, 6})); }, any);
  binary("concat", [](const Tensor& a, const Tensor& b) { return concat({a, b}, 1); }, any, any);
  unary("slice", [](const Tensor& x) { return slice(x, 1, 2); }, any);
  unary("expand", [](const Tensor& x) { return expand(x, {2, 3, 4}); },
        [](Rng& r) { return rand_tensor(r, {2, 1, 4}); });
  binary("matmul", [](const Tensor& a, const Tensor& b) { return matmul(a, b); },
         [](Rng& r) { return rand_tensor(r, {4, 3}); }, [](Rng& r) { return rand_tensor(r, {3, 5}); });
  unary("softmax_rows", [](const Tensor& x) { return softmax(mul_scalar(x, 2), 1); },
        [](Rng& r) { return rand_tensor(r, {3, 5}); });
  unary("softmax_cols", [](const Tensor& x) { return softmax(mul_scalar(x, 2), 0); },
        [](Rng& r) { return rand_tensor(r, {3, 5}); });
  for (int stride : {1, 2}) {
    rep.entries.push_back(run("conv2d_s" + std::to_string(stride), trials, rng, [&](Rng& r) {
      Tensor x = rand_tensor(r, {2, 5, 5}), w = rand_tensor(r, {3, 2, 3, 3}), b = rand_tensor(r, {3});
      return gradcheck([&](const std::vector<Tensor>&) { return conv2d(x, w, b, stride, 1); }, {x, w, b}, r);
    }));
  }
  unary("avg_pool2d", [](const Tensor& x) { return avg_pool2d(x, 2); }, [](Rng& r) { return rand_tensor(r, {2, 4, 6}); });
  unary("adaptive_avg_pool2d", [](const Tensor& x) { return adaptive_avg_pool2d(x, 2, 3); },
        [](Rng& r) { return rand_tensor(r, {2, 5, 7}); });
  unary("global_avg_pool", [](const Tensor& x) { return global_avg_pool(x); }, any);
  unary("resize_nearest", [](const Tensor& x) { return resize_nearest(x, 5, 7); }, any);
  unary("resize_bilinear_up", [](const Tensor& x) { return resize_bilinear(x, 6, 8); }, any);
  unary("resize_bilinear_down", [](const Tensor& x) { return resize_bilinear(x, 2, 3); },
        [](Rng& r) { return rand_tensor(r, {2, 5, 7}); });
  unary("pixel_shuffle", [](const Tensor& x) { return pixel_shuffle(x, 2); },
        [](Rng& r) { return rand_tensor(r, {8, 2, 3}); });
  unary("pixel_unshuffle", [](const Tensor& x) { return pixel_unshuffle(x, 2); },
        [](Rng& r) { return rand_tensor(r, {2, 4, 6}); });

  rep.entries.push_back(run("bilinear_sample", trials, rng, [&](Rng& r) {
    Tensor feat = rand_tensor(r, {2, 5, 6});
    std::vector<Scalar> c(2 * 3 * 4);
    for (std::size_t i = 0; i < 12; ++i) {
      const bool outside = r.uniform() < 0.15;
      c[i] = static_cast<Scalar>(outside ? -1.5 - r.uniform() : std::floor(r.uniform(0, 4.99)) + r.uniform(0.05, 0.95));
      c[12 + i] = static_cast<Scalar>(std::floor(r.uniform(0, 3.99)) + r.uniform(0.05, 0.95));
    }
    Tensor coords(Shape{2, 3, 4}, c);
    // Off-image samples carry no coordinate gradient by design, so compare masked outputs.
    return gradcheck(
        [&](const std::vector<Tensor>&) {
          const Sampled s = bilinear_sample(feat, coords);
          return apply_mask(s.values, s.valid);
        },
        {feat, coords}, r);
  }));

  rep.entries.push_back(run("project", trials, rng, [&](Rng& r) {
    const Camera cam = small_camera(r, 4, 5);
    Tensor pts = rand_tensor(r, {3, 4, 5});
    for (std::size_t i = 40; i < 60; ++i) pts.data_mut()[i] = static_cast<Scalar>(r.uniform(1, 3));
    return gradcheck([&](const std::vector<Tensor>&) { return project(cam, pts).coords; }, {pts}, r);
  }));
  rep.entries.push_back(run("unproject", trials, rng, [&](Rng& r) {
    const Camera cam = small_camera(r, 4, 5);
    Tensor d = rand_tensor(r, {1, 4, 5}, 1, 3);
    return gradcheck([&](const std::vector<Tensor>&) { return unproject(cam, DepthMap::dense(d)); }, {d}, r);
  }));
  rep.entries.push_back(run("rigid_transform", trials, rng, [&](Rng& r) {
    Tensor tw = small_twist(r, 1.0, 1.0);
    Tensor pts = rand_tensor(r, {3, 3, 4});
    return gradcheck([&](const std::vector<Tensor>&) { return rigid_transform(tw, pts); }, {tw, pts}, r);
  }));
  rep.entries.push_back(run("rigid_transform_small_angle", trials, rng, [&](Rng& r) {
    Tensor tw = small_twist(r, 1e-3, 1.0);
    Tensor pts = rand_tensor(r, {3, 3, 4});
    return gradcheck([&](const std::vector<Tensor>&) { return rigid_transform(tw, pts); }, {tw, pts}, r);
  }));
  rep.entries.push_back(run("cost_map", trials, rng, [&](Rng& r) {
    const int h = 6, w = 7;
    const Camera cam = small_camera(r, h, w);
    Tensor fr = smooth_features(r, 3, h, w), fo = smooth_features(r, 3, h, w);
    Tensor d = rand_tensor(r, {1, h, w}, 2, 4);
    Tensor tw = small_twist(r, 0.03, 0.1);
    // Bilinear sampling has slope jumps at integer coordinates and the twist
    // moves every sample, so a shorter step keeps the interval clear of them.
    GradcheckOptions fine;
    fine.step = 1e-8;
    return gradcheck(
        [&](const std::vector<Tensor>&) { return cost_map(fr, fo, cam, DepthMap::dense(d), tw).values; },
        {fr, fo, d, tw}, r, fine);
  }));
  rep.entries.push_back(run("average_cost", trials, rng, [&](Rng& r) {
    Tensor a = rand_tensor(r, {1, 3, 4}, 0, 2), b = rand_tensor(r, {1, 3, 4}, 0, 2);
    const Mask ma = random_mask(r, 3, 4), mb = random_mask(r, 3, 4);
    return gradcheck(
        [&](const std::vector<Tensor>&) {
          return average_cost({{apply_mask(a, ma), ma}, {apply_mask(b, mb), mb}}).values;
        },
        {a, b}, r);
  }));

  GradcheckOptions sub;
  sub.max_coords = 12;
  rep.entries.push_back(run("linear", trials, rng, [&](Rng& r) {
    ParamStore store;
    nn::Linear l = nn::Linear::create(store, "l", 5, 3, r);
    randomize(store, r, 0.3);
    Tensor x = rand_tensor(r, {5});
    auto inputs = params_of(store);
    inputs.push_back(x);
    return gradcheck([&](const std::vector<Tensor>&) { return l(x); }, inputs, r);
  }));
  rep.entries.push_back(run("cross_attention", trials, rng, [&](Rng& r) {
    ParamStore store;
    nn::AttentionBlock blk = nn::AttentionBlock::create(store, "a", 3, 3, 3, r);
    randomize(store, r, 0.2);
    Tensor ctx = rand_tensor(r, {3, 2, 3}), tmp = rand_tensor(r, {3, 2, 3}), emb = rand_tensor(r, {3, 2, 3});
    auto inputs = params_of(store);
    inputs.insert(inputs.end(), {ctx, tmp, emb});
    return gradcheck([&](const std::vector<Tensor>&) { return nn::cross_attention(blk, ctx, tmp, emb); }, inputs, r);
  }));
  rep.entries.push_back(run("conv_gru", trials, rng, [&](Rng& r) {
    ParamStore store;
    nn::ConvGRUCell cell = nn::ConvGRUCell::create(store, "g", 2, 3, r);
    randomize(store, r, 0.2);
    Tensor h = rand_tensor(r, {2, 3, 4}), x = rand_tensor(r, {3, 3, 4});
    auto inputs = params_of(store);
    inputs.insert(inputs.end(), {h, x});
    return gradcheck([&](const std::vector<Tensor>&) { return nn::conv_gru(cell, h, x); }, inputs, r, sub);
  }));
  rep.entries.push_back(run("ppm", trials, rng, [&](Rng& r) {
    ParamStore store;
    nn::PPMBlock blk = nn::PPMBlock::create(store, "p", 2, 2, 3, {1, 2, 3, 6}, r);
    randomize(store, r, 0.2);
    Tensor x = rand_tensor(r, {2, 6, 7});
    auto inputs = params_of(store);
    inputs.push_back(x);
    return gradcheck([&](const std::vector<Tensor>&) { return nn::ppm(blk, x); }, inputs, r, sub);
  }));

  rep.entries.push_back(run("depth_loss", trials, rng, [&](Rng& r) {
    RefinementTrace trace;
    std::vector<Tensor> ds;
    for (int s = 0; s < 3; ++s) {
      ds.push_back(rand_tensor(r, {1, 3, 4}, 1, 3));
      trace.depths.push_back(DepthMap::dense(ds.back()));
    }
    const DepthMap gt{rand_tensor(r, {1, 3, 4}, 1.05, 2.95), random_mask(r, 3, 4)};
    return gradcheck([&](const std::vector<Tensor>&) { return depth_loss(trace, gt); }, ds, r);
  }));
  rep.entries.push_back(run("pose_loss", trials, rng, [&](Rng& r) {
    const Camera cam = small_camera(r, 4, 5);
    const DepthMap gt = DepthMap::dense(rand_tensor(r, {1, 4, 5}, 2, 4));
    RefinementTrace trace;
    std::vector<Tensor> twists;
    std::vector<se3::Twist> gt_poses;
    for (int i = 0; i < 2; ++i) {
      const Tensor g = small_twist(r, 0.05, 0.2);
      se3::Twist gv;
      for (int k = 0; k < 6; ++k) gv[k] = g.data()[k];
      gt_poses.push_back(gv);
    }
    for (int s = 0; s < 2; ++s) {
      std::vector<Tensor> stage;
      for (int i = 0; i < 2; ++i) {
        twists.push_back(small_twist(r, 0.05, 0.2));
        stage.push_back(twists.back());
      }
      trace.poses.push_back(stage);
    }
    return gradcheck([&](const std::vector<Tensor>&) { return pose_loss(trace, gt, gt_poses, cam); }, twists, r);
  }));

  // Composite blocks: a scalar functional of the output against a random
  // subset of parameter coordinates.
  rep.entries.push_back(run("mae_forward", trials, rng, [&](Rng& r) {
    ModelConfig mc;
    mc.height = 16;
    mc.width = 16;
    mc.encoder_channels = {4, 4, 4, 4};
    mc.feature_channels = 4;
    mc.qk_channels = 4;
    mc.ppm_branch_channels = 2;
    ParamStore store;
    const MAEParams mae = MAEParams::create(store, mc, r);
    // Zero-initialized layers would otherwise feed relu exactly at its kink.
    randomize(store, r, 0.05);
    Tensor img = rand_tensor(r, {3, 16, 16}, -0.5, 0.5);
    return gradcheck([&](const std::vector<Tensor>&) { return mae_forward(mae, img).fused; }, params_of(store), r,
                     sub);
  }));
  rep.entries.push_back(run("refine_steps", trials, rng, [&](Rng& r) {
    ModelConfig mc;
    mc.height = 16;
    mc.width = 16;
    mc.context_channels = 3;
    mc.temporal_channels = 3;
    mc.qk_channels = 3;
    mc.hidden_channels = 3;
    mc.pose_head_width = 4;
    ParamStore store;
    RefinerParams rp = RefinerParams::create(store, mc, r);
    randomize(store, r, 0.2);
    const Camera cam = small_camera(r, 16, 16);
    RefineInputs in;
    in.cam_feat = cam.downscaled(4);
    in.f_ref = smooth_features(r, 3, 4, 4);
    in.f_pairs = {smooth_features(r, 3, 4, 4)};
    in.ctx_depth = rand_tensor(r, {3, 4, 4});
    in.ctx_pairs = {rand_tensor(r, {3, 4, 4})};
    Tensor d = rand_tensor(r, {1, 16, 16}, 2, 4);
    Tensor tw = small_twist(r, 0.02, 0.05);
    // Each step sees a frozen copy of the quantity the other step updates,
    // matching the stop-gradient between the alternating updates.
    const Tensor d_frozen(d.shape(), d.values());
    const Tensor tw_frozen(tw.shape(), tw.values());
    auto inputs = params_of(store);
    inputs.insert(inputs.end(), {d, tw});
    return gradcheck(
        [&](const std::vector<Tensor>&) {
          Tensor hd = tanh(rp.depth_hidden_init(in.ctx_depth));
          Tensor hp = tanh(rp.pose_hidden_init(in.ctx_pairs[0]));
          const DepthMap d1 = depth_refine_step(rp, mc, hd, DepthMap::dense(d), {tw_frozen}, in, Tensor());
          const Tensor t1 = pose_refine_step(rp, mc, hp, tw, DepthMap::dense(d_frozen), in, 0, Tensor());
          return concat({reshape(d1.values, {256}), mul_scalar(t1, 100)});
        },
        inputs, r, sub);
  }));
  return rep;
}

}  // namespace ctad
