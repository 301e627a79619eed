// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <regex>

#include "ctad/gradcheck.hpp"
#include "ctad/objective.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ctad;
using testutil::buf;

namespace {

const Camera kCam{14.0, 13.0, 3.5, 3.0, 8, 7};

RefinementTrace trace_of(const std::vector<DepthMap>& depths, const std::vector<std::vector<Tensor>>& poses) {
  RefinementTrace tr;
  tr.stages = static_cast<int>(std::max(depths.size(), poses.size()));
  tr.depths = depths;
  tr.poses = poses;
  return tr;
}

DepthMap random_depth(Rng& rng, int h, int w, double lo = 1, double hi = 6) {
  return DepthMap::dense(testutil::random(rng, {1, h, w}, lo, hi));
}

DepthMap scaled(const DepthMap& d, double c) {
  std::vector<double> v = buf(d.values);
  for (auto& x : v) x *= c;
  return {Tensor(d.values.shape(), v), d.valid};
}

se3::Twist random_twist(Rng& rng, double rot, double trans) {
  se3::Twist t{};
  for (int i = 0; i < 3; ++i) t[i] = rng.uniform(-rot, rot);
  for (int i = 3; i < 6; ++i) t[i] = rng.uniform(-trans, trans);
  return t;
}

}  // namespace

TEST(StageWeights, DiscountedTowardsEarlyStages) {
  const auto w = stage_weights(3, 0.85);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_DOUBLE_EQ(w[0], 0.7225);
  EXPECT_DOUBLE_EQ(w[1], 0.85);
  EXPECT_EQ(w[2], 1.0);
  EXPECT_EQ(stage_weights(1, 0.85), std::vector<double>{1.0});
  EXPECT_TRUE(stage_weights(0, 0.85).empty());
}

TEST(DepthLoss, ZeroAtGroundTruth) {
  Rng rng(1);
  DepthMap gt = random_depth(rng, 7, 8);
  EXPECT_EQ(depth_loss(trace_of({gt, gt, gt}, {}), gt).item(), 0.0);
}

TEST(DepthLoss, WorkedExample) {
  // Two pixels, one off by 0.5 and one exact: mean error 0.25 per stage.
  DepthMap gt = DepthMap::dense(Tensor({1, 1, 2}, std::vector<double>{2.0, 4.0}));
  DepthMap pred = DepthMap::dense(Tensor({1, 1, 2}, std::vector<double>{2.5, 4.0}));
  EXPECT_DOUBLE_EQ(depth_loss(trace_of({pred}, {}), gt).item(), 0.25);
  EXPECT_DOUBLE_EQ(depth_loss(trace_of({pred, pred, pred}, {}), gt, 0.85).item(), 0.25 * (0.7225 + 0.85 + 1.0));
}

TEST(DepthLoss, IgnoresInvalidPixelsAndRejectsEmptyMask) {
  DepthMap gt = DepthMap::dense(Tensor({1, 1, 3}, std::vector<double>{2.0, 4.0, 1.0}));
  gt.valid.values[2] = 0;
  DepthMap pred = DepthMap::dense(Tensor({1, 1, 3}, std::vector<double>{3.0, 4.0, 100.0}));
  EXPECT_DOUBLE_EQ(depth_loss(trace_of({pred}, {}), gt).item(), 0.5);
  gt.valid = Mask(1, 3, false);
  EXPECT_THROW(depth_loss(trace_of({pred}, {}), gt), std::domain_error);
}

TEST(PoseLoss, ZeroAtGroundTruth) {
  Rng rng(2);
  DepthMap gt = random_depth(rng, 7, 8);
  std::vector<se3::Twist> gt_poses{random_twist(rng, 0.05, 0.2), random_twist(rng, 0.05, 0.2)};
  std::vector<Tensor> est;
  for (const auto& t : gt_poses) est.push_back(Pose::from_twist(t).twist);
  EXPECT_EQ(pose_loss(trace_of({}, {est, est, est}), gt, gt_poses, kCam).item(), 0.0);
}

TEST(PoseLoss, LateralTranslationOnAPlane) {
  const double d = 4.0, delta = 0.1;
  DepthMap gt = DepthMap::dense(Tensor({1, 7, 8}, d));
  Tensor est({6}, std::vector<double>{0, 0, 0, delta, 0, 0});
  EXPECT_NEAR(reprojection_error(est, se3::Twist{}, gt, kCam).item(), kCam.fx * delta / d, 1e-12);
}

TEST(PoseLoss, MatchesNaiveOracle) {
  Rng rng(3);
  const oracle::Pinhole pin{kCam.fx, kCam.fy, kCam.cx, kCam.cy};
  for (int trial = 0; trial < 20; ++trial) {
    DepthMap gt = random_depth(rng, 7, 8, 0.5, 3);
    for (std::size_t i = 0; i < gt.valid.size(); ++i) gt.valid.values[i] = rng.uniform(0, 1) < 0.8;
    std::vector<se3::Twist> gt_poses{random_twist(rng, 0.3, 1.0), random_twist(rng, 0.3, 1.0)};
    std::vector<std::vector<Tensor>> stages;
    for (int s = 0; s < 3; ++s) {
      stages.push_back({Pose::from_twist(random_twist(rng, 0.3, 1.0)).twist,
                        Pose::from_twist(random_twist(rng, 0.3, 1.0)).twist});
    }
    const std::vector<int> valid(gt.valid.values.begin(), gt.valid.values.end());
    const auto w = stage_weights(3, 0.85);
    double expect = 0;
    for (int s = 0; s < 3; ++s)
      for (int i = 0; i < 2; ++i) {
        se3::Twist est{};
        for (int k = 0; k < 6; ++k) est[k] = stages[s][i].data()[k];
        expect += w[s] * oracle::reprojection_error(est, gt_poses[i], 7, 8, pin, buf(gt.values), valid);
      }
    EXPECT_NEAR(pose_loss(trace_of({}, stages), gt, gt_poses, kCam).item(), expect, 1e-9);
  }
}

TEST(Losses, GradcheckDepthAndPose) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    DepthMap gt = random_depth(rng, 5, 6);
    const se3::Twist gt_pose = random_twist(rng, 0.1, 0.3);
    const Camera cam{9.0, 9.0, 2.5, 2.0, 6, 5};
    std::vector<Tensor> inputs{testutil::random(rng, {1, 5, 6}, 1, 6, true), testutil::random(rng, {1, 5, 6}, 1, 6, true),
                               Tensor({6}, buf(Pose::from_twist(random_twist(rng, 0.1, 0.3)).twist), true)};
    const double err = gradcheck(
        [&](const std::vector<Tensor>& x) {
          RefinementTrace tr = trace_of({DepthMap::dense(x[0]), DepthMap::dense(x[1])}, {{x[2]}, {x[2]}});
          return total_loss(depth_loss(tr, gt), pose_loss(tr, gt, {gt_pose}, cam));
        },
        inputs, rng);
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Metrics, DoubledPredictionWithoutScaling) {
  Rng rng(5);
  DepthMap gt = random_depth(rng, 12, 16, 0.5, 40);
  MetricReport r = eval_metrics(scaled(gt, 2.0), gt, 80, false);
  EXPECT_EQ(r.abs_rel, 1.0);
  EXPECT_EQ(r.delta1, 0.0);
  EXPECT_EQ(r.delta2, 0.0);
  EXPECT_EQ(r.delta3, 0.0);
  EXPECT_EQ(r.pixel_count, 12u * 16u);
}

TEST(Metrics, MedianScalingRecoversAnyScale) {
  Rng rng(6);
  for (double c : {0.01, 0.37, 2.0, 7.5, 1000.0}) {
    DepthMap gt = random_depth(rng, 12, 16, 0.5, 40);
    MetricReport r = eval_metrics(scaled(gt, c), gt, 80, true);
    EXPECT_LT(r.abs_rel, 1e-12);
    EXPECT_LT(r.sq_rel, 1e-12);
    EXPECT_LT(r.rmse, 1e-12);
    EXPECT_LT(r.rmse_log, 1e-12);
    EXPECT_EQ(r.delta1, 1.0);
    EXPECT_EQ(r.delta2, 1.0);
    EXPECT_EQ(r.delta3, 1.0);
    EXPECT_TRUE(r.median_scaled);
  }
}

TEST(Metrics, HandComputedValues) {
  DepthMap gt = DepthMap::dense(Tensor({1, 1, 4}, std::vector<double>{1, 2, 4, 8}));
  DepthMap pred = DepthMap::dense(Tensor({1, 1, 4}, std::vector<double>{1, 3, 4, 4}));
  MetricReport r = eval_metrics(pred, gt, 80, false);
  EXPECT_DOUBLE_EQ(r.abs_rel, (0 + 0.5 + 0 + 0.5) / 4);
  EXPECT_DOUBLE_EQ(r.sq_rel, (0 + 0.5 + 0 + 2.0) / 4);
  EXPECT_DOUBLE_EQ(r.rmse, std::sqrt((1.0 + 16.0) / 4));
  EXPECT_DOUBLE_EQ(r.rmse_log, std::sqrt((std::pow(std::log(1.5), 2) + std::pow(std::log(0.5), 2)) / 4));
  EXPECT_DOUBLE_EQ(r.delta1, 0.5);
  EXPECT_DOUBLE_EQ(r.delta2, 0.75);
  EXPECT_DOUBLE_EQ(r.delta3, 0.75);
}

TEST(Metrics, ExcludesInvalidCappedAndOutOfRegionPixels) {
  DepthMap gt = DepthMap::dense(Tensor({1, 1, 5}, std::vector<double>{1, 2, 90, 0, 4}));
  gt.valid.values[4] = 0;
  DepthMap pred = DepthMap::dense(Tensor({1, 1, 5}, std::vector<double>{2, 2, 1, 1, 1}));
  MetricReport r = eval_metrics(pred, gt, 80, false);
  EXPECT_EQ(r.pixel_count, 2u);
  EXPECT_DOUBLE_EQ(r.abs_rel, 0.5);
  Mask region(1, 5, false);
  region.values[1] = 1;
  MetricReport rr = eval_metrics(pred, gt, 80, false, &region);
  EXPECT_EQ(rr.pixel_count, 1u);
  EXPECT_EQ(rr.abs_rel, 0.0);
  region.values[1] = 0;
  EXPECT_THROW(eval_metrics(pred, gt, 80, false, &region), std::domain_error);
  EXPECT_THROW(eval_metrics(DepthMap::dense(Tensor({1, 1, 4})), gt, 80, false), DimensionError);
}

TEST(Metrics, TsvFormatAndAveraging) {
  MetricReport a;
  a.abs_rel = 0.125;
  a.rmse = 2.0;
  a.delta1 = 1.0;
  a.pixel_count = 10;
  const std::string line = a.tsv();
  EXPECT_EQ(line, "0.125000\t0.000000\t2.000000\t0.000000\t1.000000\t0.000000\t0.000000");
  EXPECT_TRUE(std::regex_match(line, std::regex(R"((-?\d+\.\d{6}\t){6}-?\d+\.\d{6})")));
  MetricReport b = a;
  b.abs_rel = 0.375;
  b.pixel_count = 30;
  MetricReport avg = average_reports({a, b});
  EXPECT_DOUBLE_EQ(avg.abs_rel, 0.25);
  EXPECT_EQ(avg.pixel_count, 40u);
  EXPECT_THROW(average_reports({}), std::invalid_argument);
}
