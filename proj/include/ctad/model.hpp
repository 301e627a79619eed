// SPDX-License-Identifier: Apache-2.0
//
// Multi-level encoder with pyramid pooling and cross-scale attention, the
// initial depth/pose heads, and the depth and pose context networks.

#ifndef CTAD_MODEL_HPP_
#define CTAD_MODEL_HPP_

#include <array>
#include <vector>

#include "ctad/geometry.hpp"
#include "ctad/nn.hpp"

namespace ctad {

struct ModelConfig {
  int height = 64;
  int width = 96;
  std::vector<int> encoder_channels{16, 24, 32, 48};
  int feature_channels = 16;   // fused matching feature
  int context_channels = 16;
  int temporal_channels = 16;
  int qk_channels = 16;
  int hidden_channels = 16;
  int pose_head_width = 32;
  int ppm_branch_channels = 8;
  std::vector<int> ppm_bins{1, 2, 3, 6};
  double d_min = 0.5;
  double d_max = 20.0;
  double depth_delta_scale = 1.0;
  double pose_delta_scale = 0.01;

  /// Throws std::invalid_argument on non-positive sizes, H or W not
  /// divisible by 16, or an empty depth range.
  void validate() const;
  /// softplus(0) * prior_scale() equals the midpoint of [d_min, d_max].
  double prior_scale() const;
  double prior_depth() const { return 0.5 * (d_min + d_max); }
};

struct EncoderStage {
  nn::Conv2d down;  // 3x3 stride 2
  nn::Conv2d conv;  // 3x3 stride 1
};

struct MAEParams {
  std::vector<EncoderStage> encoder;            // 4 stages
  nn::PPMBlock ppm;                             // on the deepest stage
  std::vector<nn::AttentionBlock> cross_scale;  // levels 4, 3, 2, 1
  std::vector<nn::Conv2d> lateral;              // levels 3, 2, 1 -> fused channels
  std::vector<nn::Conv2d> upscale;              // C_f -> 4 C_f before pixel shuffle

  static MAEParams create(ParamStore& store, const ModelConfig& cfg, Rng& rng);
};

struct HeadParams {
  nn::Conv2d depth_conv;
  nn::Conv2d depth_out;  // zero-initialized
  nn::Conv2d pose_conv;  // stride 2 over [F_r, F_i]
  nn::Linear pose_out;   // zero-initialized

  static HeadParams create(ParamStore& store, const ModelConfig& cfg, Rng& rng);
};

struct ContextNet {
  nn::Conv2d c1, c2, c3;
  Tensor operator()(const Tensor& x) const;
};

struct ContextNetParams {
  ContextNet depth;  // input: I_r
  ContextNet pose;   // input: [I_r, I_i]

  static ContextNetParams create(ParamStore& store, const ModelConfig& cfg, Rng& rng);
};

struct Pyramid {
  std::array<Tensor, 4> levels;  // strides 2, 4, 8, 16
  Tensor fused;                  // stride 4
};

/// Bins of `bins` that fit an h x w map.
std::vector<int> usable_bins(const std::vector<int>& bins, int height, int width);

/// Throws DimensionError if H or W is not divisible by 16.
Pyramid mae_forward(const MAEParams& params, const Tensor& image);

/// Depth from the fused reference feature, upsampled to height x width and
/// mapped into [d_min, d_max].
DepthMap predict_depth(const HeadParams& heads, const ModelConfig& cfg, const Tensor& f_ref);
/// Twist from the shared pose head.
Tensor predict_pose(const HeadParams& heads, const Tensor& f_ref, const Tensor& f_other);

struct InitialPrediction {
  DepthMap depth;
  std::vector<Tensor> poses;
};

InitialPrediction initial_predict(const HeadParams& heads, const ModelConfig& cfg, const Tensor& f_ref,
                                  const std::vector<Tensor>& f_others);

struct ContextFeatures {
  Tensor depth;               // F_r^c
  std::vector<Tensor> poses;  // F_i^c per neighbour
};

ContextFeatures context_forward(const ContextNetParams& params, const Tensor& image_ref,
                                const std::vector<Tensor>& images_other);

/// Images enter the network shifted to zero mean.
Tensor normalize_image(const Tensor& image);

}  // namespace ctad

#endif  // CTAD_MODEL_HPP_
