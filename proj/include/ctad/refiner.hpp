// SPDX-License-Identifier: Apache-2.0
//
// Alternating depth/pose refinement with temporal attention and a fixed
// geometry embedding built from cost maps against every neighbour frame.

#ifndef CTAD_REFINER_HPP_
#define CTAD_REFINER_HPP_

#include <cstddef>
#include <vector>

#include "ctad/geometry.hpp"
#include "ctad/model.hpp"
#include "ctad/nn.hpp"

namespace ctad {

struct RefinerParams {
  nn::Conv2d temporal1;  // cost -> C_t
  nn::Conv2d temporal2;
  nn::AttentionBlock depth_cta;
  nn::AttentionBlock pose_cta;
  nn::Conv2d lge1;  // 1x1
  nn::Conv2d lge2;  // 3x3
  nn::Conv2d depth_hidden_init;
  nn::Conv2d pose_hidden_init;
  nn::ConvGRUCell depth_gru;  // input: [F^d, depth / d_max]
  nn::ConvGRUCell pose_gru;   // input: F^p
  nn::Conv2d depth_delta;     // zero-initialized
  nn::Conv2d pose_delta_conv;
  nn::Linear pose_delta_out;  // zero-initialized

  static RefinerParams create(ParamStore& store, const ModelConfig& cfg, Rng& rng);
};

/// Two-convolution temporal feature of a cost map.
Tensor temporal_features(const RefinerParams& params, const CostMap& cost);

/// Per-frame embeddings phi_j, computed once per reference frame.
struct LgeBank {
  std::vector<Tensor> per_frame;  // [C_qk,h,w] each

  bool empty() const { return per_frame.empty(); }
  /// Sum over every frame except `exclude` (pass -1 to sum all). Undefined
  /// tensor when nothing remains.
  Tensor sum_excluding(int exclude) const;
};

struct LGEmbedding {
  Tensor values;
  int source_count = 0;
};

/// phi_j for each frame j: cost map against the reference under the given
/// depth and pose (both detached), temporal extractor, then 1x1 conv, ReLU,
/// 3x3 conv. Increments the thread-local call counter once per call.
LgeBank lge_precompute(const RefinerParams& params, const Tensor& f_ref, const std::vector<Tensor>& frames,
                       const Camera& cam_feat, const DepthMap& depth_feat, const std::vector<Tensor>& poses);

/// Sum of phi_j over `frames`. Throws std::invalid_argument when fewer than
/// one other frame is given (N < 2 including the active pair).
LGEmbedding lge_embed(const RefinerParams& params, const Tensor& f_ref, const std::vector<Tensor>& frames,
                      const Camera& cam_feat, const DepthMap& depth_feat, const std::vector<Tensor>& poses);

std::size_t lge_call_count();
void reset_lge_call_count();

/// Everything the refiner reads for one reference frame.
struct RefineInputs {
  Camera cam_feat;                // intrinsics at feature resolution
  Tensor f_ref;                   // F_r
  std::vector<Tensor> f_pairs;    // F_i per refined pair
  Tensor ctx_depth;               // F_r^c
  std::vector<Tensor> ctx_pairs;  // F_i^c per refined pair
  LgeBank lge;                    // embeddings for every neighbour; may be empty
  std::vector<int> pair_frames;   // index into lge.per_frame for each pair
};

/// Average of the per-pair cost maps at the current depth, with every pose
/// detached.
CostMap depth_step_cost(const RefineInputs& in, const DepthMap& depth, const std::vector<Tensor>& poses);

/// One depth update with every pose frozen. Updates `hidden` in place.
DepthMap depth_refine_step(const RefinerParams& params, const ModelConfig& cfg, Tensor& hidden,
                           const DepthMap& depth, const std::vector<Tensor>& poses, const RefineInputs& in,
                           const Tensor& embed);

/// One pose update of pair `pair` with depth frozen. Updates `hidden` in
/// place and returns the canonicalized twist.
Tensor pose_refine_step(const RefinerParams& params, const ModelConfig& cfg, Tensor& hidden, const Tensor& twist,
                        const DepthMap& depth, const RefineInputs& in, int pair, const Tensor& embed);

struct RefinementTrace {
  int stages = 0;
  int steps = 0;
  DepthMap initial_depth;
  std::vector<Tensor> initial_poses;
  std::vector<DepthMap> depths;             // D^s, s = 1..m
  std::vector<std::vector<Tensor>> poses;   // T^s per pair, s = 1..m
  std::size_t depth_delta_calls = 0;
  std::size_t pose_delta_calls = 0;

  /// Stage 0 is the initial estimate.
  const DepthMap& depth_at(int stage) const { return stage == 0 ? initial_depth : depths.at(stage - 1); }
  const std::vector<Tensor>& poses_at(int stage) const { return stage == 0 ? initial_poses : poses.at(stage - 1); }
};

/// m stages of n depth steps followed by n pose steps for every pair.
/// Throws std::invalid_argument if m < 1 or n < 1.
RefinementTrace refine(const RefinerParams& params, const ModelConfig& cfg, const RefineInputs& in,
                       const DepthMap& depth0, const std::vector<Tensor>& poses0, int m, int n);

}  // namespace ctad

#endif  // CTAD_REFINER_HPP_
