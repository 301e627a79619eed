// SPDX-License-Identifier: Apache-2.0

#include "ctad/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace ctad {

std::vector<double> stage_weights(int m, double gamma) {
  std::vector<double> w(std::max(m, 0));
  for (int s = 1; s <= m; ++s) w[s - 1] = std::pow(gamma, m - s);
  return w;
}

Tensor depth_loss(const RefinementTrace& trace, const DepthMap& gt, double gamma) {
  const int m = static_cast<int>(trace.depths.size());
  if (m == 0) throw std::invalid_argument("depth_loss: empty trace");
  const auto w = stage_weights(m, gamma);
  const Tensor target = gt.values.detach();
  Tensor total;
  for (int s = 0; s < m; ++s) {
    Tensor term = mul_scalar(masked_mean(abs(sub(trace.depths[s].values, target)), gt.valid), Scalar(w[s]));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor reprojection_error(const Tensor& twist, const se3::Twist& gt, const DepthMap& gt_depth, const Camera& cam) {
  const Tensor points = unproject(cam, DepthMap{gt_depth.values.detach(), gt_depth.valid});
  const Projection pred = project(cam, rigid_transform(twist, points));
  const Projection ref = project(cam, rigid_transform(Pose::from_twist(gt).twist, points));
  const Mask valid = gt_depth.valid & pred.front & ref.front;
  return masked_mean(channel_sum(abs(sub(pred.coords, ref.coords))), valid);
}

Tensor pose_loss(const RefinementTrace& trace, const DepthMap& gt_depth, const std::vector<se3::Twist>& gt_poses,
                 const Camera& cam, double gamma) {
  const int m = static_cast<int>(trace.poses.size());
  if (m == 0) throw std::invalid_argument("pose_loss: empty trace");
  const auto w = stage_weights(m, gamma);
  Tensor total;
  for (int s = 0; s < m; ++s) {
    const auto& poses = trace.poses[s];
    if (poses.size() > gt_poses.size()) throw std::invalid_argument("pose_loss: missing ground-truth poses");
    for (std::size_t i = 0; i < poses.size(); ++i) {
      Tensor term = mul_scalar(reprojection_error(poses[i], gt_poses[i], gt_depth, cam), Scalar(w[s]));
      total = total.defined() ? add(total, term) : term;
    }
  }
  return total;
}

std::string MetricReport::tsv() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f", abs_rel, sq_rel, rmse, rmse_log, delta1,
                delta2, delta3);
  return buf;
}

namespace {

double lower_median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

MetricReport eval_metrics(const DepthMap& pred, const DepthMap& gt, double cap, bool median_scaling,
                          const Mask* region) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw DimensionError("eval_metrics: prediction " + shape_str(pred.values.shape()) + " vs ground truth " +
                         shape_str(gt.values.shape()));
  }
  if (region && (region->height != gt.height() || region->width != gt.width())) {
    throw DimensionError("eval_metrics: region mask size mismatch");
  }
  const auto pv = pred.values.data();
  const auto gv = gt.values.data();
  std::vector<double> p, g;
  for (std::size_t i = 0; i < gv.size(); ++i) {
    const double d = gv[i];
    if (!gt.valid.values[i] || !(d > 0) || d > cap) continue;
    if (region && !region->values[i]) continue;
    p.push_back(pv[i]);
    g.push_back(d);
  }
  if (g.empty()) throw std::domain_error("eval_metrics: no valid pixels");
  MetricReport r;
  r.cap = cap;
  r.median_scaled = median_scaling;
  r.pixel_count = g.size();
  if (median_scaling) {
    const double mp = lower_median(p);
    if (!(mp > 0)) throw std::domain_error("eval_metrics: non-positive prediction median");
    const double ratio = lower_median(g) / mp;
    for (auto& x : p) x *= ratio;
  }
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  double abs_rel = 0, sq_rel = 0, se = 0, sle = 0;
  std::size_t a1 = 0, a2 = 0, a3 = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = p[i], t = g[i], e = d - t;
    abs_rel += std::abs(e) / t;
    sq_rel += e * e / t;
    se += e * e;
    const double le = std::log(std::clamp(d, 1e-3, cap)) - std::log(t);
    sle += le * le;
    const double ratio = std::max(d / t, t / d);
    a1 += ratio < t1;
    a2 += ratio < t2;
    a3 += ratio < t3;
  }
  const double n = static_cast<double>(g.size());
  r.abs_rel = abs_rel / n;
  r.sq_rel = sq_rel / n;
  r.rmse = std::sqrt(se / n);
  r.rmse_log = std::sqrt(sle / n);
  r.delta1 = static_cast<double>(a1) / n;
  r.delta2 = static_cast<double>(a2) / n;
  r.delta3 = static_cast<double>(a3) / n;
  return r;
}

MetricReport average_reports(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("average_reports: nothing to average");
  MetricReport r;
  r.cap = reports.front().cap;
  r.median_scaled = reports.front().median_scaled;
  for (const auto& x : reports) {
    r.abs_rel += x.abs_rel;
    r.sq_rel += x.sq_rel;
    r.rmse += x.rmse;
    r.rmse_log += x.rmse_log;
    r.delta1 += x.delta1;
    r.delta2 += x.delta2;
    r.delta3 += x.delta3;
    r.pixel_count += x.pixel_count;
  }
  const double n = static_cast<double>(reports.size());
  r.abs_rel /= n;
  r.sq_rel /= n;
  r.rmse /= n;
  r.rmse_log /= n;
  r.delta1 /= n;
  r.delta2 /= n;
  r.delta3 /= n;
  return r;
}

}  // namespace ctad
