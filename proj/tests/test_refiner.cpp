// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "ctad/gradcheck.hpp"
#include "ctad/refiner.hpp"
#include "test_util.hpp"

using namespace ctad;
using testutil::buf;

namespace {

constexpr int kFh = 4, kFw = 6;

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.height = 16;
  cfg.width = 24;
  cfg.feature_channels = 4;
  cfg.context_channels = 4;
  cfg.temporal_channels = 4;
  cfg.qk_channels = 4;
  cfg.hidden_channels = 4;
  cfg.pose_head_width = 4;
  return cfg;
}

Camera feature_camera() {
  Camera cam{20.0, 20.0, 11.5, 7.5, 24, 16};
  return cam.downscaled(4);
}

struct Fixture {
  ModelConfig cfg = small_config();
  ParamStore store;
  RefinerParams params;
  RefineInputs in;
  DepthMap depth0;
  std::vector<Tensor> poses0;
  std::vector<Tensor> frames;
  std::vector<Tensor> frame_poses;

  Fixture(int pairs, int neighbours, std::uint64_t seed) {
    Rng rng(seed);
    params = RefinerParams::create(store, cfg, rng);
    in.cam_feat = feature_camera();
    in.f_ref = testutil::random(rng, {cfg.feature_channels, kFh, kFw});
    for (int j = 0; j < neighbours; ++j) {
      frames.push_back(testutil::random(rng, {cfg.feature_channels, kFh, kFw}));
      frame_poses.push_back(Tensor({6}, rng.uniform_values(6, -0.02, 0.02)));
    }
    in.ctx_depth = testutil::random(rng, {cfg.context_channels, kFh, kFw});
    for (int i = 0; i < pairs; ++i) {
      in.f_pairs.push_back(frames[i]);
      in.ctx_pairs.push_back(testutil::random(rng, {cfg.context_channels, kFh, kFw}));
      in.pair_frames.push_back(i);
      poses0.push_back(frame_poses[i]);
    }
    depth0 = DepthMap::dense(testutil::random(rng, {1, cfg.height, cfg.width}, 2, 8));
    in.lge = lge_precompute(params, in.f_ref, frames, in.cam_feat, depth0, frame_poses);
  }

  void randomize_heads(Rng& rng, double scale) {
    for (Tensor t : {params.depth_delta.weight, params.depth_delta.bias, params.pose_delta_out.weight,
                     params.pose_delta_out.bias}) {
      for (auto& v : t.data_mut()) v = rng.uniform(-scale, scale);
    }
  }
};

double abs_sum(std::span<const Scalar> g) {
  double s = 0;
  for (double v : g) s += std::abs(v);
  return s;
}

}  // namespace

TEST(Lge, SingleNeighbourIsThatFramesEmbedding) {
  Fixture f(1, 1, 1);
  LGEmbedding e = lge_embed(f.params, f.in.f_ref, f.frames, f.in.cam_feat, f.depth0, f.frame_poses);
  EXPECT_EQ(e.source_count, 1);
  EXPECT_EQ(buf(e.values), buf(f.in.lge.per_frame[0]));
  EXPECT_THROW(lge_embed(f.params, f.in.f_ref, {}, f.in.cam_feat, f.depth0, {}), std::invalid_argument);
}

TEST(Lge, AdditiveOverPerFrameEmbeddings) {
  Fixture f(2, 4, 2);
  LGEmbedding all = lge_embed(f.params, f.in.f_ref, f.frames, f.in.cam_feat, f.depth0, f.frame_poses);
  EXPECT_EQ(all.source_count, 4);
  std::vector<double> expect(all.values.numel(), 0.0);
  for (std::size_t j = 0; j < f.frames.size(); ++j) {
    LGEmbedding one = lge_embed(f.params, f.in.f_ref, {f.frames[j]}, f.in.cam_feat, f.depth0, {f.frame_poses[j]});
    for (std::size_t k = 0; k < expect.size(); ++k) expect[k] += one.values.data()[k];
  }
  EXPECT_LT(testutil::max_abs_diff(buf(all.values), expect), 1e-12);

  Tensor without1 = f.in.lge.sum_excluding(1);
  for (std::size_t k = 0; k < expect.size(); ++k) {
    EXPECT_NEAR(without1.data()[k], expect[k] - f.in.lge.per_frame[1].data()[k], 1e-12);
  }
}

TEST(Lge, ZeroProjectionGivesZeroEmbedding) {
  Fixture f(1, 3, 3);
  for (Tensor t : {f.params.lge2.weight, f.params.lge2.bias}) {
    for (auto& v : t.data_mut()) v = 0.0;
  }
  LGEmbedding e = lge_embed(f.params, f.in.f_ref, f.frames, f.in.cam_feat, f.depth0, f.frame_poses);
  for (double v : buf(e.values)) EXPECT_EQ(v, 0.0);
}

TEST(Lge, InputsAreDetached) {
  Fixture f(1, 2, 4);
  DepthMap depth = DepthMap::dense(Tensor(f.depth0.values.shape(), buf(f.depth0.values), true));
  Tensor pose = Tensor({6}, buf(f.frame_poses[0]), true);
  LGEmbedding e = lge_embed(f.params, f.in.f_ref, {f.frames[0]}, f.in.cam_feat, depth, {pose});
  backward(sum(e.values));
  EXPECT_EQ(abs_sum(depth.values.grad()), 0.0);
  EXPECT_EQ(abs_sum(pose.grad()), 0.0);
}

TEST(Lge, OneCallPerPrecompute) {
  Fixture f(2, 3, 5);
  reset_lge_call_count();
  LgeBank bank = lge_precompute(f.params, f.in.f_ref, f.frames, f.in.cam_feat, f.depth0, f.frame_poses);
  EXPECT_EQ(lge_call_count(), 1u);
  EXPECT_EQ(bank.per_frame.size(), 3u);
  for (auto [m, n] : {std::pair{1, 1}, std::pair{3, 2}}) {
    refine(f.params, f.cfg, f.in, f.depth0, f.poses0, m, n);
    EXPECT_EQ(lge_call_count(), 1u);
  }
}

TEST(Refine, ZeroInitHeadsReturnInputsBitwise) {
  Fixture f(2, 3, 6);
  RefinementTrace tr = refine(f.params, f.cfg, f.in, f.depth0, f.poses0, 3, 4);
  ASSERT_EQ(tr.depths.size(), 3u);
  for (int s = 0; s <= 3; ++s) {
    EXPECT_EQ(buf(tr.depth_at(s).values), buf(f.depth0.values));
    for (int i = 0; i < 2; ++i) EXPECT_EQ(buf(tr.poses_at(s)[i]), buf(f.poses0[i]));
  }
}

TEST(Refine, DeltaCallCounts) {
  for (auto [m, n, pairs] : {std::tuple{1, 1, 1}, std::tuple{3, 4, 2}, std::tuple{2, 3, 3}}) {
    Fixture f(pairs, 3, 7);
    RefinementTrace tr = refine(f.params, f.cfg, f.in, f.depth0, f.poses0, m, n);
    EXPECT_EQ(tr.depth_delta_calls, std::size_t(m * n));
    EXPECT_EQ(tr.pose_delta_calls, std::size_t(m * n * pairs));
    EXPECT_EQ(tr.depths.size(), std::size_t(m));
    EXPECT_EQ(tr.poses.size(), std::size_t(m));
  }
}

TEST(Refine, RejectsBadStageCounts) {
  Fixture f(1, 2, 8);
  EXPECT_THROW(refine(f.params, f.cfg, f.in, f.depth0, f.poses0, 0, 1), std::invalid_argument);
  EXPECT_THROW(refine(f.params, f.cfg, f.in, f.depth0, f.poses0, 1, 0), std::invalid_argument);
  EXPECT_THROW(refine(f.params, f.cfg, f.in, f.depth0, {}, 1, 1), std::invalid_argument);
}

TEST(Refine, TrainedHeadsMoveEstimatesAndStayInRange) {
  Fixture f(2, 3, 9);
  Rng rng(1);
  f.randomize_heads(rng, 0.5);
  RefinementTrace tr = refine(f.params, f.cfg, f.in, f.depth0, f.poses0, 2, 2);
  EXPECT_NE(buf(tr.depth_at(2).values), buf(f.depth0.values));
  EXPECT_NE(buf(tr.poses_at(2)[0]), buf(f.poses0[0]));
  for (double v : buf(tr.depth_at(2).values)) {
    EXPECT_GE(v, f.cfg.d_min);
    EXPECT_LE(v, f.cfg.d_max);
  }
}

TEST(Refine, DepthUpdateSaturatesAtRangeLimit) {
  Fixture f(1, 2, 10);
  f.params.depth_delta.bias.data_mut()[0] = 50.0;
  Tensor hidden = tanh(f.params.depth_hidden_init(f.in.ctx_depth));
  DepthMap d = depth_refine_step(f.params, f.cfg, hidden, f.depth0, f.poses0, f.in, Tensor());
  for (double v : buf(d.values)) EXPECT_EQ(v, f.cfg.d_max);
}

TEST(Refine, DepthStepFreezesPoses) {
  Fixture f(2, 2, 11);
  Rng rng(2);
  f.randomize_heads(rng, 0.5);
  std::vector<Tensor> poses;
  for (const auto& p : f.poses0) poses.push_back(Tensor({6}, buf(p), true));
  DepthMap depth = DepthMap::dense(Tensor(f.depth0.values.shape(), buf(f.depth0.values), true));
  Tensor hidden = tanh(f.params.depth_hidden_init(f.in.ctx_depth));
  DepthMap out = depth_refine_step(f.params, f.cfg, hidden, depth, poses, f.in, f.in.lge.sum_excluding(0));
  backward(sum(out.values));
  EXPECT_GT(abs_sum(depth.values.grad()), 0.0);
  for (const auto& p : poses) EXPECT_EQ(abs_sum(p.grad()), 0.0);
}

TEST(Refine, PoseStepFreezesDepth) {
  Fixture f(1, 2, 12);
  Rng rng(3);
  f.randomize_heads(rng, 0.5);
  Tensor twist({6}, buf(f.poses0[0]), true);
  DepthMap depth = DepthMap::dense(Tensor(f.depth0.values.shape(), buf(f.depth0.values), true));
  Tensor hidden = tanh(f.params.pose_hidden_init(f.in.ctx_pairs[0]));
  Tensor out = pose_refine_step(f.params, f.cfg, hidden, twist, depth, f.in, 0, f.in.lge.sum_excluding(0));
  backward(sum(out));
  EXPECT_GT(abs_sum(twist.grad()), 0.0);
  EXPECT_EQ(abs_sum(depth.values.grad()), 0.0);
}

TEST(Refine, StaticSceneHasZeroDepthStepCost) {
  Fixture f(2, 2, 13);
  f.in.f_pairs = {f.in.f_ref, f.in.f_ref};
  std::vector<Tensor> identity(2, Tensor({6}, 0.0));
  CostMap c = depth_step_cost(f.in, f.depth0, identity);
  int valid = 0;
  for (std::size_t p = 0; p < c.valid.size(); ++p) {
    if (!c.valid[p]) continue;
    ++valid;
    EXPECT_LT(std::abs(c.values.data()[p]), 1e-12);
  }
  EXPECT_GT(valid, kFh * kFw / 2);
}

TEST(Refine, GradcheckDepthStep) {
  Fixture f(2, 3, 14);
  Rng rng(4);
  f.randomize_heads(rng, 0.2);
  std::vector<Tensor> inputs{Tensor(f.depth0.values.shape(), buf(f.depth0.values), true)};
  for (const auto& [name, t] : f.store.entries()) {
    if (name.find("pose") == std::string::npos && name.find("lge") == std::string::npos) inputs.push_back(t);
  }
  const Tensor embed = f.in.lge.sum_excluding(0).detach();
  const double err = gradcheck(
      [&](const std::vector<Tensor>& x) {
        Tensor hidden = tanh(f.params.depth_hidden_init(f.in.ctx_depth));
        DepthMap d = depth_refine_step(f.params, f.cfg, hidden, DepthMap::dense(x[0]), f.poses0, f.in, embed);
        d = depth_refine_step(f.params, f.cfg, hidden, d, f.poses0, f.in, embed);
        return d.values;
      },
      inputs, rng);
  EXPECT_LT(err, 1e-4);
}

TEST(Refine, GradcheckPoseStep) {
  Fixture f(2, 3, 15);
  Rng rng(5);
  f.randomize_heads(rng, 0.2);
  f.cfg.pose_delta_scale = 0.05;
  std::vector<Tensor> inputs{Tensor({6}, buf(f.poses0[1]), true)};
  for (const auto& [name, t] : f.store.entries()) {
    if (name.find("pose") != std::string::npos || name.find("temporal") != std::string::npos) inputs.push_back(t);
  }
  const Tensor embed = f.in.lge.sum_excluding(1).detach();
  const double err = gradcheck(
      [&](const std::vector<Tensor>& x) {
        Tensor hidden = tanh(f.params.pose_hidden_init(f.in.ctx_pairs[1]));
        Tensor t = pose_refine_step(f.params, f.cfg, hidden, x[0], f.depth0, f.in, 1, embed);
        return pose_refine_step(f.params, f.cfg, hidden, t, f.depth0, f.in, 1, embed);
      },
      inputs, rng);
  EXPECT_LT(err, 1e-4);
}
