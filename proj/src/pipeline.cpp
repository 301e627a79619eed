// SPDX-License-Identifier: Apache-2.0

#include "ctad/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ctad {

Network Network::create(const TrainConfig& config) {
  config.validate();
  Network net;
  net.config = config;
  const ModelConfig mc = config.model();
  Rng rng(config.seed);
  net.mae = MAEParams::create(net.store, mc, rng);
  net.heads = HeadParams::create(net.store, mc, rng);
  net.context = ContextNetParams::create(net.store, mc, rng);
  net.refiner = RefinerParams::create(net.store, mc, rng);
  return net;
}

ForwardOutput forward(const Network& net, const synth::Sample& sample, const Camera& cam) {
  const TrainConfig& cfg = net.config;
  const ModelConfig mc = cfg.model();
  const int n_nb = static_cast<int>(sample.images.size());
  if (n_nb < cfg.pairs) {
    throw std::invalid_argument("forward: sample has " + std::to_string(n_nb) + " neighbours, need " +
                                std::to_string(cfg.pairs));
  }
  const Tensor ref = normalize_image(sample.image_ref);
  std::vector<Tensor> others;
  for (const auto& img : sample.images) others.push_back(normalize_image(img));

  const Tensor f_ref = mae_forward(net.mae, ref).fused;
  std::vector<Tensor> f_others;
  for (const auto& img : others) f_others.push_back(mae_forward(net.mae, img).fused);

  ForwardOutput out;
  out.initial = initial_predict(net.heads, mc, f_ref, f_others);

  RefineInputs in;
  in.cam_feat = cam.downscaled(cfg.height / f_ref.dim(1));
  in.f_ref = f_ref;
  const ContextFeatures ctx =
      context_forward(net.context, ref, std::vector<Tensor>(others.begin(), others.begin() + cfg.pairs));
  in.ctx_depth = ctx.depth;
  in.ctx_pairs = ctx.poses;
  for (int i = 0; i < cfg.pairs; ++i) {
    in.f_pairs.push_back(f_others[i]);
    in.pair_frames.push_back(i);
  }
  if (n_nb >= 2) {
    const DepthMap d_feat = downsample_depth(out.initial.depth, cfg.height / f_ref.dim(1));
    in.lge = lge_precompute(net.refiner, f_ref, f_others, in.cam_feat, d_feat, out.initial.poses);
  }
  const std::vector<Tensor> poses0(out.initial.poses.begin(), out.initial.poses.begin() + cfg.pairs);
  out.trace = refine(net.refiner, mc, in, out.initial.depth, poses0, cfg.m, cfg.n);
  return out;
}

SampleLoss sample_loss(const Network& net, const ForwardOutput& out, const synth::Sample& sample, const Camera& cam) {
  SampleLoss l;
  l.depth = depth_loss(out.trace, sample.gt_depth, net.config.gamma);
  l.pose = pose_loss(out.trace, sample.gt_depth, sample.gt_poses, cam, net.config.gamma);
  l.total = total_loss(l.depth, l.pose);
  return l;
}

void adam_step(ParamStore& store, AdamState& state, double lr, double beta1, double beta2, double eps) {
  for (const auto& [name, t] : store.entries()) {
    if (!t.has_grad()) throw std::logic_error("adam_step: no gradient for " + name);
  }
  ++state.step;
  const double bc1 = 1 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1 - std::pow(beta2, static_cast<double>(state.step));
  for (const auto& [name, t] : store.entries()) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    m.resize(t.numel(), 0.0);
    v.resize(t.numel(), 0.0);
    Tensor handle = t;
    auto data = handle.data_mut();
    const auto g = t.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double gi = g[i];
      m[i] = beta1 * m[i] + (1 - beta1) * gi;
      v[i] = beta2 * v[i] + (1 - beta2) * gi * gi;
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      data[i] = static_cast<Scalar>(data[i] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

double lr_schedule(long epoch, double base, double gamma, long step) {
  if (epoch < 0) throw std::invalid_argument("lr_schedule: negative epoch");
  if (step < 1) throw std::invalid_argument("lr_schedule: step must be >= 1");
  return base * std::pow(gamma, static_cast<double>(epoch / step));
}

double clip_grad_norm(ParamStore& store, double max_norm) {
  double sq = 0;
  for (const auto& [name, t] : store.entries()) {
    if (!t.has_grad()) continue;
    for (Scalar g : t.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& [name, t] : store.entries()) {
      if (!t.has_grad()) continue;
      for (auto& g : t.node()->grad) g = static_cast<Scalar>(g * s);
    }
  }
  return norm;
}

namespace {

constexpr const char* kConfigPrefix = "config.";

std::vector<std::pair<std::string, std::string>> config_items(const TrainConfig& c) {
  std::vector<std::pair<std::string, std::string>> items;
  std::istringstream in(format_config(c));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    items.emplace_back(line.substr(0, eq), line.substr(eq + 3));
  }
  return items;
}

StoredTensor encode_value(const std::string& key, const std::string& value) {
  std::vector<double> v;
  if (key == "lr_step_unit") {
    v.push_back(value == "steps" ? 0.0 : 1.0);
  } else if (key == "seed" || key == "split_seed") {
    const std::uint64_t s = std::stoull(value);
    v = {static_cast<double>(s >> 32), static_cast<double>(s & 0xffffffffull)};
  } else {
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  }
  return {Shape{static_cast<int>(v.size())}, v, 2};
}

std::string decode_value(const std::string& key, const StoredTensor& t) {
  char buf[64];
  if (key == "lr_step_unit") return t.values.at(0) == 0.0 ? "steps" : "epochs";
  if (key == "seed" || key == "split_seed") {
    if (t.values.size() != 2) throw CheckpointError("checkpoint: malformed " + key);
    const auto s = (static_cast<std::uint64_t>(t.values[0]) << 32) | static_cast<std::uint64_t>(t.values[1]);
    return std::to_string(s);
  }
  std::string out;
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", t.values[i]);
    out += (i ? "," : "") + std::string(buf);
  }
  return out;
}

}  // namespace

TensorTable to_table(const Network& net) {
  TensorTable table;
  for (const auto& [key, value] : config_items(net.config)) table[kConfigPrefix + key] = encode_value(key, value);
  const std::uint8_t dtype = sizeof(Scalar) == 4 ? 1 : 2;
  for (const auto& [name, t] : net.store.entries()) {
    const auto d = t.data();
    table[name] = {t.shape(), std::vector<double>(d.begin(), d.end()), dtype};
  }
  return table;
}

Network from_table(const TensorTable& table) {
  std::string text;
  for (const auto& [name, t] : table) {
    if (name.rfind(kConfigPrefix, 0) != 0) continue;
    const std::string key = name.substr(std::char_traits<char>::length(kConfigPrefix));
    text += key + " = " + decode_value(key, t) + "\n";
  }
  TrainConfig config;
  try {
    config = parse_config(text);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: bad stored configuration: ") + e.what());
  }
  Network net = Network::create(config);
  std::size_t params = 0;
  for (const auto& [name, t] : table) {
    if (name.rfind(kConfigPrefix, 0) == 0) continue;
    if (!net.store.contains(name)) throw CheckpointError("checkpoint: unexpected tensor " + name);
    Tensor p = net.store.get(name);
    if (p.shape() != t.shape) {
      throw CheckpointError("checkpoint: " + name + " has shape " + shape_str(t.shape) + ", expected " +
                            shape_str(p.shape()));
    }
    auto data = p.data_mut();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<Scalar>(t.values[i]);
    ++params;
  }
  if (params != net.store.size()) throw CheckpointError("checkpoint: missing parameters");
  return net;
}

std::string format_log_row(const TrainLogRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.9e,%.9e,%.9e,%.6e", row.step, row.depth, row.pose, row.total, row.lr);
  return buf;
}

std::string log_header(const TrainConfig& c, std::size_t train_samples) {
  std::ostringstream out;
  out << "# resolution " << c.height << "x" << c.width << ", batch " << c.batch << ", steps " << c.steps
      << ", m " << c.m << ", n " << c.n << ", neighbours " << c.neighbors() << ", pairs " << c.pairs << ", seed "
      << c.seed << ", train samples " << train_samples << "\n";
  out << "# step,depth_loss,pose_loss,total,lr\n";
  return out.str();
}

DataSplit split_sequence(const TrainConfig& config, const synth::Sequence& seq) {
  if (seq.height != config.height || seq.width != config.width) {
    throw std::invalid_argument("data is " + std::to_string(seq.height) + "x" + std::to_string(seq.width) +
                                " but the configuration expects " + std::to_string(config.height) + "x" +
                                std::to_string(config.width));
  }
  auto samples = synth::make_samples(seq, config.neighbor_offsets, config.d_min, config.d_max);
  auto [tr, ev] = synth::make_splits(samples, config.train_frac, config.split_seed);
  return {std::move(tr), std::move(ev)};
}

TrainResult train(const TrainConfig& config, const synth::Sequence& seq,
                  const std::function<void(const TrainLogRow&)>& on_row) {
  config.validate();
  const DataSplit data = split_sequence(config, seq);
  TrainResult result{Network::create(config), {}};
  Network& net = result.net;
  AdamState adam;
  Rng order_rng(config.seed ^ 0x5eedf00dull);
  const std::size_t count = data.train.size();
  std::vector<std::size_t> order(count);
  std::size_t cursor = count;  // forces a shuffle on the first draw
  auto next_index = [&]() {
    if (cursor == count) {
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = count - 1; i > 0; --i) std::swap(order[i], order[order_rng.below(i + 1)]);
      cursor = 0;
    }
    return order[cursor++];
  };
  for (int step = 0; step < config.steps; ++step) {
    const long epoch = static_cast<long>(static_cast<std::size_t>(step) * config.batch / count);
    const double lr = lr_schedule(config.lr_step_unit == DecayUnit::kSteps ? step : epoch, config.lr,
                                  config.lr_gamma, config.lr_step_size);
    net.store.zero_grad();
    TrainLogRow row;
    row.step = step + 1;
    row.lr = lr;
    for (int b = 0; b < config.batch; ++b) {
      const synth::Sample& s = data.train[next_index()];
      const ForwardOutput out = forward(net, s, seq.camera);
      const SampleLoss loss = sample_loss(net, out, s, seq.camera);
      const double total = loss.total.item();
      if (!std::isfinite(total)) {
        throw std::runtime_error("non-finite loss at step " + std::to_string(step + 1));
      }
      row.depth += loss.depth.item() / config.batch;
      row.pose += loss.pose.item() / config.batch;
      row.total += total / config.batch;
      backward(mul_scalar(loss.total, Scalar(1.0 / config.batch)));
    }
    clip_grad_norm(net.store, config.clip_norm);
    adam_step(net.store, adam, lr, config.beta1, config.beta2, config.eps);
    result.log.push_back(row);
    if (on_row) on_row(row);
  }
  return result;
}

EvalResult evaluate(const Network& net, const std::vector<synth::Sample>& samples, const Camera& cam,
                    const EvalOptions& options) {
  const TrainConfig& cfg = net.config;
  if (cam.height != cfg.height || cam.width != cfg.width) {
    throw std::invalid_argument("evaluate: data is " + std::to_string(cam.height) + "x" + std::to_string(cam.width) +
                                " but the checkpoint was trained at " + std::to_string(cfg.height) + "x" +
                                std::to_string(cfg.width));
  }
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  NoGradGuard no_grad;
  const int stages = cfg.m + 1;
  std::vector<std::vector<MetricReport>> all(stages), dyn(stages);
  EvalResult result;
  for (const auto& s : samples) {
    if (s.gt_depth.height() != cfg.height || s.gt_depth.width() != cfg.width) {
      throw std::invalid_argument("evaluate: sample resolution differs from the checkpoint configuration");
    }
    ForwardOutput out;
    if (!options.gt_as_prediction) out = forward(net, s, cam);
    bool has_dynamic = false;
    for (int k = 0; k < stages; ++k) {
      const DepthMap& pred = options.gt_as_prediction ? s.gt_depth : out.trace.depth_at(k);
      all[k].push_back(eval_metrics(pred, s.gt_depth, options.cap, options.median_scaling));
      try {
        dyn[k].push_back(eval_metrics(pred, s.gt_depth, options.cap, options.median_scaling, &s.dynamic));
        has_dynamic = true;
      } catch (const std::domain_error&) {
        // no moving-object pixels in this sample
      }
    }
    ++result.samples;
    if (has_dynamic) ++result.dynamic_samples;
  }
  for (int k = 0; k < stages; ++k) {
    result.stages.push_back(average_reports(all[k]));
    if (!dyn[k].empty()) result.dynamic_stages.push_back(average_reports(dyn[k]));
  }
  return result;
}

}  // namespace ctad
