// SPDX-License-Identifier: Apache-2.0
//
// Supervised depth and reprojection losses over a refinement trace, and
// standard monocular depth metrics.

#ifndef CTAD_OBJECTIVE_HPP_
#define CTAD_OBJECTIVE_HPP_

#include <string>
#include <vector>

#include "ctad/geometry.hpp"
#include "ctad/refiner.hpp"

namespace ctad {

/// gamma^(m-s) for s = 1..m.
std::vector<double> stage_weights(int m, double gamma);

/// Sum over stages of gamma^(m-s) times the mean absolute depth error on
/// ground-truth-valid pixels. Throws std::domain_error on an empty mask.
Tensor depth_loss(const RefinementTrace& trace, const DepthMap& gt, double gamma = 0.85);

/// Mean over valid pixels of |du| + |dv| between projecting the
/// ground-truth point cloud with `twist` and with `gt`. Only pixels in
/// front of the camera under both transforms count.
Tensor reprojection_error(const Tensor& twist, const se3::Twist& gt, const DepthMap& gt_depth, const Camera& cam);

/// Sum over stages and pairs of gamma^(m-s) times reprojection_error.
Tensor pose_loss(const RefinementTrace& trace, const DepthMap& gt_depth, const std::vector<se3::Twist>& gt_poses,
                 const Camera& cam, double gamma = 0.85);

inline Tensor total_loss(const Tensor& depth, const Tensor& pose) { return add(depth, pose); }

struct LossReport {
  double depth = 0;
  double pose = 0;
  double total = 0;
};

struct MetricReport {
  double abs_rel = 0;
  double sq_rel = 0;
  double rmse = 0;
  double rmse_log = 0;
  double delta1 = 0;
  double delta2 = 0;
  double delta3 = 0;
  std::size_t pixel_count = 0;
  double cap = 80;
  bool median_scaled = false;

  /// Seven tab-separated values, fixed 6-decimal precision.
  std::string tsv() const;
};

/// Metrics over pixels with gt valid and 0 < gt <= cap, optionally further
/// restricted to `region`. With median_scaling the prediction is first
/// multiplied by median(gt) / median(pred). Throws std::domain_error when no
/// pixel qualifies.
MetricReport eval_metrics(const DepthMap& pred, const DepthMap& gt, double cap, bool median_scaling,
                          const Mask* region = nullptr);

/// Per-field mean of several reports (pixel counts summed).
MetricReport average_reports(const std::vector<MetricReport>& reports);

}  // namespace ctad

#endif  // CTAD_OBJECTIVE_HPP_
