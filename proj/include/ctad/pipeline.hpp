// SPDX-License-Identifier: Apache-2.0
//
// Whole-network assembly, the per-sample forward pass, the optimizer loop,
// checkpoint binding and evaluation.

#ifndef CTAD_PIPELINE_HPP_
#define CTAD_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "ctad/checkpoint.hpp"
#include "ctad/config.hpp"
#include "ctad/model.hpp"
#include "ctad/objective.hpp"
#include "ctad/refiner.hpp"
#include "ctad/synth.hpp"

namespace ctad {

struct Network {
  TrainConfig config;
  ParamStore store;
  MAEParams mae;
  HeadParams heads;
  ContextNetParams context;
  RefinerParams refiner;

  /// Parameters are drawn in a fixed order from Rng(config.seed).
  static Network create(const TrainConfig& config);
};

struct ForwardOutput {
  InitialPrediction initial;  // all neighbours
  RefinementTrace trace;      // refined pairs
};

/// MAE features for the reference and every neighbour, initial depth and
/// poses, one geometry-embedding pass, then the alternating refinement.
ForwardOutput forward(const Network& net, const synth::Sample& sample, const Camera& cam);

struct SampleLoss {
  Tensor depth;
  Tensor pose;
  Tensor total;
};

SampleLoss sample_loss(const Network& net, const ForwardOutput& out, const synth::Sample& sample, const Camera& cam);

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  long step = 0;
};

/// One bias-corrected Adam update of every tensor in `store`. Throws
/// std::logic_error if a trainable tensor has no gradient.
void adam_step(ParamStore& store, AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

/// base * gamma^floor(epoch / step)
double lr_schedule(long epoch, double base = 2e-4, double gamma = 0.5, long step = 30);

/// Scales every gradient so the global L2 norm is at most max_norm;
/// returns the norm before clipping.
double clip_grad_norm(ParamStore& store, double max_norm);

TensorTable to_table(const Network& net);
/// Rebuilds a network from a checkpoint table. Throws CheckpointError on
/// missing, extra or mis-shaped tensors.
Network from_table(const TensorTable& table);

struct TrainLogRow {
  int step = 0;
  double depth = 0;
  double pose = 0;
  double total = 0;
  double lr = 0;
};

std::string format_log_row(const TrainLogRow& row);
/// Comment lines describing the run configuration.
std::string log_header(const TrainConfig& config, std::size_t train_samples);

struct TrainResult {
  Network net;
  std::vector<TrainLogRow> log;
};

/// Runs config.steps optimizer steps over the training split of `seq`.
/// Each row is also passed to `on_row` if set. Throws std::runtime_error
/// naming the step when a loss is not finite.
TrainResult train(const TrainConfig& config, const synth::Sequence& seq,
                  const std::function<void(const TrainLogRow&)>& on_row = {});

struct DataSplit {
  std::vector<synth::Sample> train;
  std::vector<synth::Sample> eval;
};

DataSplit split_sequence(const TrainConfig& config, const synth::Sequence& seq);

struct EvalOptions {
  double cap = 80;
  bool median_scaling = false;
  /// Replace every prediction with the ground truth (pipeline self-check).
  bool gt_as_prediction = false;
};

struct EvalResult {
  std::vector<MetricReport> stages;          // 0..m, all valid pixels
  std::vector<MetricReport> dynamic_stages;  // 0..m, moving-object pixels only
  std::size_t samples = 0;
  std::size_t dynamic_samples = 0;
};

/// Never records gradients or changes parameters. Throws
/// std::invalid_argument if the samples' resolution differs from the
/// network configuration.
EvalResult evaluate(const Network& net, const std::vector<synth::Sample>& samples, const Camera& cam,
                    const EvalOptions& options);

}  // namespace ctad

#endif  // CTAD_PIPELINE_HPP_
