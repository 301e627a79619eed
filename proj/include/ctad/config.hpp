// SPDX-License-Identifier: Apache-2.0

#ifndef CTAD_CONFIG_HPP_
#define CTAD_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "ctad/model.hpp"

namespace ctad {

enum class DecayUnit { kSteps, kEpochs };

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr_gamma = 0.5;
  int lr_step_size = 100;
  DecayUnit lr_step_unit = DecayUnit::kSteps;
  int batch = 2;
  int steps = 300;
  int m = 3;
  int n = 4;
  double gamma = 0.85;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 7;
  int height = 64;
  int width = 96;
  double d_min = 0.5;
  double d_max = 20.0;
  double cap = 80.0;
  double clip_norm = 1.0;
  double train_frac = 0.8;
  std::vector<int> neighbor_offsets{-1, -2, -3};
  int pairs = 2;
  double depth_delta_scale = 1.0;
  double pose_delta_scale = 0.01;

  /// Throws std::invalid_argument when a value is out of range.
  void validate() const;
  ModelConfig model() const;
  int neighbors() const { return static_cast<int>(neighbor_offsets.size()); }
};

/// Flat `key = value` lines; '#' starts a comment. Unknown keys, duplicate
/// keys and malformed values throw std::invalid_argument naming the line.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);
/// Canonical text form; parse_config(format_config(c)) == c.
std::string format_config(const TrainConfig& c);

}  // namespace ctad

#endif  // CTAD_CONFIG_HPP_
