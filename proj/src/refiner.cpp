// SPDX-License-Identifier: Apache-2.0

#include "ctad/refiner.hpp"

#include <stdexcept>
#include <string>

namespace ctad {

RefinerParams RefinerParams::create(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  const int ct = cfg.temporal_channels, cc = cfg.context_channels, cq = cfg.qk_channels, ch = cfg.hidden_channels;
  RefinerParams p;
  p.temporal1 = nn::Conv2d::create(store, "refiner.temporal1", 1, ct, 3, 1, rng);
  p.temporal2 = nn::Conv2d::create(store, "refiner.temporal2", ct, ct, 3, 1, rng);
  p.depth_cta = nn::AttentionBlock::create(store, "refiner.depth_cta", cc, ct, cq, rng);
  p.pose_cta = nn::AttentionBlock::create(store, "refiner.pose_cta", cc, ct, cq, rng);
  p.lge1 = nn::Conv2d::create(store, "refiner.lge1", ct, cq, 1, 1, rng);
  p.lge2 = nn::Conv2d::create(store, "refiner.lge2", cq, cq, 3, 1, rng);
  p.depth_hidden_init = nn::Conv2d::create(store, "refiner.depth_hidden_init", cc, ch, 1, 1, rng);
  p.pose_hidden_init = nn::Conv2d::create(store, "refiner.pose_hidden_init", cc, ch, 1, 1, rng);
  p.depth_gru = nn::ConvGRUCell::create(store, "refiner.depth_gru", ch, ct + 1, rng);
  p.pose_gru = nn::ConvGRUCell::create(store, "refiner.pose_gru", ch, ct, rng);
  p.depth_delta = nn::Conv2d::create(store, "refiner.depth_delta", ch, 1, 3, 1, rng, nn::Init::kZero);
  p.pose_delta_conv = nn::Conv2d::create(store, "refiner.pose_delta_conv", ch, cfg.pose_head_width, 3, 2, rng);
  p.pose_delta_out = nn::Linear::create(store, "refiner.pose_delta_out", cfg.pose_head_width, 6, rng, nn::Init::kZero);
  return p;
}

Tensor temporal_features(const RefinerParams& params, const CostMap& cost) {
  return params.temporal2(relu(params.temporal1(cost.values)));
}

Tensor LgeBank::sum_excluding(int exclude) const {
  Tensor total;
  for (int j = 0; j < static_cast<int>(per_frame.size()); ++j) {
    if (j == exclude) continue;
    total = total.defined() ? add(total, per_frame[j]) : per_frame[j];
  }
  return total;
}

namespace {

thread_local std::size_t g_lge_calls = 0;

DepthMap detached(const DepthMap& d) { return {d.values.detach(), d.valid}; }

DepthMap to_feature_resolution(const DepthMap& depth, const Camera& cam_feat) {
  if (depth.height() == cam_feat.height && depth.width() == cam_feat.width) return depth;
  if (depth.height() % cam_feat.height != 0 || depth.height() / cam_feat.height * cam_feat.width != depth.width()) {
    throw DimensionError("refiner: depth " + shape_str(depth.values.shape()) +
                         " is not an integer multiple of the feature camera");
  }
  return downsample_depth(depth, depth.height() / cam_feat.height);
}

}  // namespace

std::size_t lge_call_count() { return g_lge_calls; }
void reset_lge_call_count() { g_lge_calls = 0; }

LgeBank lge_precompute(const RefinerParams& params, const Tensor& f_ref, const std::vector<Tensor>& frames,
                       const Camera& cam_feat, const DepthMap& depth_feat, const std::vector<Tensor>& poses) {
  if (frames.size() != poses.size()) {
    throw std::invalid_argument("lge: " + std::to_string(frames.size()) + " frames but " +
                                std::to_string(poses.size()) + " poses");
  }
  ++g_lge_calls;
  const DepthMap d = detached(to_feature_resolution(depth_feat, cam_feat));
  LgeBank bank;
  for (std::size_t j = 0; j < frames.size(); ++j) {
    const CostMap c = cost_map(f_ref, frames[j], cam_feat, d, poses[j].detach());
    bank.per_frame.push_back(params.lge2(relu(params.lge1(temporal_features(params, c)))));
  }
  return bank;
}

LGEmbedding lge_embed(const RefinerParams& params, const Tensor& f_ref, const std::vector<Tensor>& frames,
                      const Camera& cam_feat, const DepthMap& depth_feat, const std::vector<Tensor>& poses) {
  if (frames.empty()) throw std::invalid_argument("lge: needs at least one frame besides the active pair");
  const LgeBank bank = lge_precompute(params, f_ref, frames, cam_feat, depth_feat, poses);
  return {bank.sum_excluding(-1), static_cast<int>(frames.size())};
}

CostMap depth_step_cost(const RefineInputs& in, const DepthMap& depth, const std::vector<Tensor>& poses) {
  if (poses.size() != in.f_pairs.size()) {
    throw std::invalid_argument("refiner: " + std::to_string(poses.size()) + " poses for " +
                                std::to_string(in.f_pairs.size()) + " pairs");
  }
  const DepthMap d = to_feature_resolution(depth, in.cam_feat);
  std::vector<CostMap> maps;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    maps.push_back(cost_map(in.f_ref, in.f_pairs[i], in.cam_feat, d, poses[i].detach()));
  }
  return average_cost(maps);
}

DepthMap depth_refine_step(const RefinerParams& params, const ModelConfig& cfg, Tensor& hidden,
                           const DepthMap& depth, const std::vector<Tensor>& poses, const RefineInputs& in,
                           const Tensor& embed) {
  const CostMap cost = depth_step_cost(in, depth, poses);
  const Tensor ft = temporal_features(params, cost);
  const Tensor fd = nn::cross_attention(params.depth_cta, in.ctx_depth, ft, embed);
  const DepthMap d_low = to_feature_resolution(depth, in.cam_feat);
  hidden = nn::conv_gru(params.depth_gru, hidden, concat({fd, mul_scalar(d_low.values, Scalar(1.0 / cfg.d_max))}));
  Tensor delta = mul_scalar(params.depth_delta(hidden), Scalar(cfg.depth_delta_scale));
  delta = resize_bilinear(delta, depth.height(), depth.width());
  return {clamp(add(depth.values, delta), Scalar(cfg.d_min), Scalar(cfg.d_max)), depth.valid};
}

Tensor pose_refine_step(const RefinerParams& params, const ModelConfig& cfg, Tensor& hidden, const Tensor& twist,
                        const DepthMap& depth, const RefineInputs& in, int pair, const Tensor& embed) {
  const DepthMap d = detached(to_feature_resolution(depth, in.cam_feat));
  const CostMap cost = cost_map(in.f_ref, in.f_pairs.at(pair), in.cam_feat, d, twist);
  const Tensor ft = temporal_features(params, cost);
  const Tensor fp = nn::cross_attention(params.pose_cta, in.ctx_pairs.at(pair), ft, embed);
  hidden = nn::conv_gru(params.pose_gru, hidden, fp);
  const Tensor delta = params.pose_delta_out(global_avg_pool(relu(params.pose_delta_conv(hidden))));
  return canonicalize_twist(add(twist, mul_scalar(delta, Scalar(cfg.pose_delta_scale))));
}

RefinementTrace refine(const RefinerParams& params, const ModelConfig& cfg, const RefineInputs& in,
                       const DepthMap& depth0, const std::vector<Tensor>& poses0, int m, int n) {
  if (m < 1 || n < 1) {
    throw std::invalid_argument("refine: stages and steps must be >= 1, got m=" + std::to_string(m) +
                                " n=" + std::to_string(n));
  }
  const int pairs = static_cast<int>(in.f_pairs.size());
  if (pairs < 1 || static_cast<int>(poses0.size()) != pairs || static_cast<int>(in.ctx_pairs.size()) != pairs) {
    throw std::invalid_argument("refine: pair features, contexts and poses disagree in count");
  }
  if (!in.lge.empty() && static_cast<int>(in.pair_frames.size()) != pairs) {
    throw std::invalid_argument("refine: every pair needs an embedding frame index");
  }
  auto embed_for = [&](int pair) {
    return in.lge.empty() ? Tensor() : in.lge.sum_excluding(in.pair_frames[pair]);
  };
  const Tensor depth_embed = embed_for(0);
  std::vector<Tensor> pose_embeds;
  for (int i = 0; i < pairs; ++i) pose_embeds.push_back(embed_for(i));

  RefinementTrace trace;
  trace.stages = m;
  trace.steps = n;
  trace.initial_depth = depth0;
  trace.initial_poses = poses0;

  Tensor h_depth = tanh(params.depth_hidden_init(in.ctx_depth));
  std::vector<Tensor> h_pose;
  for (int i = 0; i < pairs; ++i) h_pose.push_back(tanh(params.pose_hidden_init(in.ctx_pairs[i])));

  DepthMap depth = depth0;
  std::vector<Tensor> poses = poses0;
  for (int s = 0; s < m; ++s) {
    for (int t = 0; t < n; ++t) {
      depth = depth_refine_step(params, cfg, h_depth, depth, poses, in, depth_embed);
      ++trace.depth_delta_calls;
    }
    for (int i = 0; i < pairs; ++i) {
      for (int t = 0; t < n; ++t) {
        poses[i] = pose_refine_step(params, cfg, h_pose[i], poses[i], depth, in, i, pose_embeds[i]);
        ++trace.pose_delta_calls;
      }
    }
    trace.depths.push_back(depth);
    trace.poses.push_back(poses);
  }
  return trace;
}

}  // namespace ctad
