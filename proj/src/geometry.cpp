// SPDX-License-Identifier: Apache-2.0

#include "ctad/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ctad {

using detail::Node;

// ---------------------------------------------------------------------------
// se3 non-template parts
// ---------------------------------------------------------------------------

namespace se3 {

std::array<double, 16> to_matrix(const Transform& p) {
  std::array<double, 16> m{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m[4 * r + c] = p.rotation[3 * r + c];
    m[4 * r + 3] = p.translation[r];
  }
  m[15] = 1;
  return m;
}

namespace {

Transform from_matrix(const std::array<double, 16>& m) {
  Transform p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation[3 * r + c] = m[4 * r + c];
    p.translation[r] = m[4 * r + 3];
  }
  return p;
}

// Solves a x = b for a row-major 3x3 by Cramer's rule.
Vec3<double> solve3(const Mat3<double>& a, const Vec3<double>& b) {
  auto det3 = [](const Mat3<double>& m) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  };
  const double d = det3(a);
  Vec3<double> x;
  for (int k = 0; k < 3; ++k) {
    Mat3<double> ak = a;
    for (int r = 0; r < 3; ++r) ak[3 * r + k] = b[r];
    x[k] = det3(ak) / d;
  }
  return x;
}

}  // namespace

Twist log(const Transform& p) {
  const auto& R = p.rotation;
  const Vec3<double> vee{R[7] - R[5], R[2] - R[6], R[3] - R[1]};  // 2 sin(t) axis
  const double s = 0.5 * std::sqrt(vee[0] * vee[0] + vee[1] * vee[1] + vee[2] * vee[2]);
  const double c = std::clamp(0.5 * (R[0] + R[4] + R[8] - 1.0), -1.0, 1.0);
  const double theta = std::atan2(s, c);

  Vec3<double> omega;
  if (theta < 1e-6) {
    for (int k = 0; k < 3; ++k) omega[k] = 0.5 * vee[k] * (1.0 + theta * theta / 6.0);
  } else if (s > 1e-3) {
    const double f = theta / (2.0 * s);
    for (int k = 0; k < 3; ++k) omega[k] = f * vee[k];
  } else {
    // Near pi: recover the axis from the symmetric part R = c I + (1-c) a a^T + ...
    const double one_minus_c = 1.0 - c;
    Vec3<double> axis;
    int big = 0;
    for (int k = 1; k < 3; ++k)
      if (R[4 * k] > R[4 * big]) big = k;
    axis[big] = std::sqrt(std::max(0.0, (R[4 * big] - c) / one_minus_c));
    for (int k = 0; k < 3; ++k) {
      if (k == big) continue;
      axis[k] = (R[3 * big + k] + R[3 * k + big]) / (2.0 * one_minus_c * axis[big]);
    }
    const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    double sign = 1.0;
    if (axis[0] * vee[0] + axis[1] * vee[1] + axis[2] * vee[2] < 0) sign = -1.0;
    for (int k = 0; k < 3; ++k) omega[k] = sign * theta * axis[k] / n;
  }

  const double x = omega[0], y = omega[1], z = omega[2];
  double a, b, cc;
  exp_coefficients(x * x + y * y + z * z, a, b, cc);
  const Mat3<double> k{0, -z, y, z, 0, -x, -y, x, 0};
  const Mat3<double> k2{-(y * y + z * z), x * y, x * z, x * y, -(x * x + z * z), y * z, x * z, y * z, -(x * x + y * y)};
  Mat3<double> v;
  for (int i = 0; i < 9; ++i) v[i] = (i % 4 == 0 ? 1.0 : 0.0) + b * k[i] + cc * k2[i];
  const Vec3<double> rho = solve3(v, p.translation);
  return {omega[0], omega[1], omega[2], rho[0], rho[1], rho[2]};
}

Twist canonicalize(const Twist& t) {
  const double n = std::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2]);
  if (n < std::numbers::pi) return t;
  Twist out = log(exp(t));
  const double m = std::sqrt(out[0] * out[0] + out[1] * out[1] + out[2] * out[2]);
  if (m >= std::numbers::pi) {
    // Exactly pi: both axis signs describe the same rotation; shrink by one ulp.
    const double f = std::nextafter(std::numbers::pi, 0.0) / m;
    Twist shrunk = out;
    for (int k = 0; k < 3; ++k) shrunk[k] *= f;
    const Transform target = exp(out);
    return log(Transform{exp(shrunk).rotation, target.translation});
  }
  return out;
}

}  // namespace se3

// ---------------------------------------------------------------------------
// Camera / Pose / DepthMap
// ---------------------------------------------------------------------------

void Camera::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("camera: focal lengths must be positive");
  if (width < 1 || height < 1) throw std::invalid_argument("camera: image extent must be positive");
  if (cx < 0 || cx >= width || cy < 0 || cy >= height) {
    throw std::invalid_argument("camera: principal point outside the image");
  }
}

Camera Camera::downscaled(int factor) const {
  if (factor < 1 || width % factor != 0 || height % factor != 0) {
    throw std::invalid_argument("camera: extent not divisible by " + std::to_string(factor));
  }
  const double f = 1.0 / factor;
  return {fx * f, fy * f, cx * f, cy * f, width / factor, height / factor};
}

Pose Pose::identity() { return from_twist({0, 0, 0, 0, 0, 0}); }

Pose Pose::from_twist(const se3::Twist& t, bool requires_grad) {
  return {Tensor(Shape{6}, std::vector<Scalar>(t.begin(), t.end()), requires_grad)};
}

se3::Twist Pose::values() const {
  se3::Twist t;
  auto v = twist.data();
  for (int k = 0; k < 6; ++k) t[k] = static_cast<double>(v[k]);
  return t;
}

DepthMap DepthMap::dense(Tensor values) {
  Mask m(values.dim(1), values.dim(2), true);
  return {std::move(values), std::move(m)};
}

// ---------------------------------------------------------------------------
// Differentiable geometry ops
// ---------------------------------------------------------------------------

namespace {

void require_points(const Tensor& points, const char* op) {
  if (points.rank() != 3 || points.dim(0) != 3) {
    throw DimensionError(std::string(op) + ": expected points [3,H,W], got " + shape_str(points.shape()));
  }
}

}  // namespace

Tensor pixel_grid(int height, int width) {
  const std::size_t n = std::size_t(height) * width;
  std::vector<Scalar> g(2 * n);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      g[std::size_t(y) * width + x] = Scalar(x);
      g[n + std::size_t(y) * width + x] = Scalar(y);
    }
  return Tensor(Shape{2, height, width}, std::move(g));
}

Projection project(const Camera& cam, const Tensor& points) {
  require_points(points, "project");
  const int h = points.dim(1), w = points.dim(2);
  const std::size_t n = std::size_t(h) * w;
  auto pv = points.data();
  std::vector<Scalar> out(2 * n);
  Mask front(h, w, false);
  for (std::size_t p = 0; p < n; ++p) {
    const Scalar z = pv[2 * n + p];
    if (z > Scalar(kZEps)) {
      front.values[p] = 1;
      out[p] = Scalar(cam.fx) * pv[p] / z + Scalar(cam.cx);
      out[n + p] = Scalar(cam.fy) * pv[n + p] / z + Scalar(cam.cy);
    } else {
      out[p] = Scalar(-1);
      out[n + p] = Scalar(-1);
    }
  }
  Tensor coords = detail::make_result(Shape{2, h, w}, std::move(out), {points}, [=](Node& self) {
    auto& P = *self.inputs[0];
    auto& gp = P.ensure_grad();
    for (std::size_t p = 0; p < n; ++p) {
      if (!front.values[p]) continue;
      const Scalar x = P.data[p], y = P.data[n + p], z = P.data[2 * n + p];
      const Scalar gu = self.grad[p], gv = self.grad[n + p];
      const Scalar iz = Scalar(1) / z;
      gp[p] += gu * Scalar(cam.fx) * iz;
      gp[n + p] += gv * Scalar(cam.fy) * iz;
      gp[2 * n + p] += -(gu * Scalar(cam.fx) * x + gv * Scalar(cam.fy) * y) * iz * iz;
    }
  });
  return {coords, front};
}

Tensor unproject(const Camera& cam, const DepthMap& depth) {
  const Tensor& d = depth.values;
  if (d.rank() != 3 || d.dim(0) != 1) throw DimensionError("unproject: expected depth [1,H,W], got " + shape_str(d.shape()));
  const int h = d.dim(1), w = d.dim(2);
  if (depth.valid.height != h || depth.valid.width != w) throw DimensionError("unproject: mask/depth size mismatch");
  const std::size_t n = std::size_t(h) * w;
  auto dv = d.data();
  std::vector<Scalar> rx(n), ry(n);  // ray direction per unit depth
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t p = std::size_t(y) * w + x;
      rx[p] = Scalar((x - cam.cx) / cam.fx);
      ry[p] = Scalar((y - cam.cy) / cam.fy);
    }
  std::vector<Scalar> out(3 * n);
  for (std::size_t p = 0; p < n; ++p) {
    if (depth.valid.values[p] && !(dv[p] > 0)) {
      throw std::invalid_argument("unproject: non-positive depth on a valid pixel");
    }
    out[p] = rx[p] * dv[p];
    out[n + p] = ry[p] * dv[p];
    out[2 * n + p] = dv[p];
  }
  return detail::make_result(Shape{3, h, w}, std::move(out), {d}, [n, rx = std::move(rx), ry = std::move(ry)](Node& self) {
    auto& gd = self.inputs[0]->ensure_grad();
    for (std::size_t p = 0; p < n; ++p) gd[p] += self.grad[p] * rx[p] + self.grad[n + p] * ry[p] + self.grad[2 * n + p];
  });
}

Tensor rigid_transform(const Tensor& twist, const Tensor& points) {
  require_points(points, "rigid_transform");
  if (twist.numel() != 6) throw DimensionError("rigid_transform: twist must have 6 entries, got " + shape_str(twist.shape()));
  using J = se3::Jet<6>;
  std::array<J, 6> tj;
  for (int k = 0; k < 6; ++k) tj[k] = J::variable(static_cast<double>(twist.data()[k]), k);
  const auto rigid = se3::exp(tj);

  std::array<Scalar, 9> rot;
  std::array<Scalar, 3> trans;
  // d rot / d xi_k and d trans / d xi_k
  std::array<std::array<Scalar, 9>, 6> drot;
  std::array<std::array<Scalar, 3>, 6> dtrans;
  for (int i = 0; i < 9; ++i) {
    rot[i] = Scalar(rigid.rotation[i].a);
    for (int k = 0; k < 6; ++k) drot[k][i] = Scalar(rigid.rotation[i].v[k]);
  }
  for (int i = 0; i < 3; ++i) {
    trans[i] = Scalar(rigid.translation[i].a);
    for (int k = 0; k < 6; ++k) dtrans[k][i] = Scalar(rigid.translation[i].v[k]);
  }

  const int h = points.dim(1), w = points.dim(2);
  const std::size_t n = std::size_t(h) * w;
  auto pv = points.data();
  std::vector<Scalar> out(3 * n);
  for (std::size_t p = 0; p < n; ++p) {
    const Scalar x = pv[p], y = pv[n + p], z = pv[2 * n + p];
    for (int r = 0; r < 3; ++r) out[r * n + p] = rot[3 * r] * x + rot[3 * r + 1] * y + rot[3 * r + 2] * z + trans[r];
  }
  return detail::make_result(Shape{3, h, w}, std::move(out), {twist, points}, [=](Node& self) {
    auto& T = *self.inputs[0];
    auto& P = *self.inputs[1];
    const auto& g = self.grad;
    if (P.requires_grad) {
      auto& gp = P.ensure_grad();
      for (std::size_t p = 0; p < n; ++p)
        for (int c = 0; c < 3; ++c)
          gp[c * n + p] += rot[c] * g[p] + rot[3 + c] * g[n + p] + rot[6 + c] * g[2 * n + p];
    }
    if (T.requires_grad) {
      // sum_p g_p (outer) [x_p; 1]: second moments let each partial be a 3x4 contraction.
      std::array<Scalar, 12> m{};
      for (std::size_t p = 0; p < n; ++p) {
        const Scalar x = P.data[p], y = P.data[n + p], z = P.data[2 * n + p];
        for (int r = 0; r < 3; ++r) {
          const Scalar gr = g[r * n + p];
          m[4 * r] += gr * x;
          m[4 * r + 1] += gr * y;
          m[4 * r + 2] += gr * z;
          m[4 * r + 3] += gr;
        }
      }
      auto& gt = T.ensure_grad();
      for (int k = 0; k < 6; ++k) {
        Scalar s = 0;
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) s += drot[k][3 * r + c] * m[4 * r + c];
          s += dtrans[k][r] * m[4 * r + 3];
        }
        gt[k] += s;
      }
    }
  });
}

Projection warp_coordinates(const Camera& cam, const DepthMap& depth, const Tensor& twist) {
  return project(cam, rigid_transform(twist, unproject(cam, depth)));
}

CostMap cost_map(const Tensor& f_ref, const Tensor& f_other, const Camera& cam, const DepthMap& depth,
                 const Tensor& twist) {
  if (f_ref.shape() != f_other.shape() || f_ref.rank() != 3) {
    throw DimensionError("cost_map: feature shapes differ: " + shape_str(f_ref.shape()) + " vs " +
                         shape_str(f_other.shape()));
  }
  if (depth.height() != f_ref.dim(1) || depth.width() != f_ref.dim(2) || cam.height != f_ref.dim(1) ||
      cam.width != f_ref.dim(2)) {
    throw DimensionError("cost_map: depth/camera resolution does not match features " + shape_str(f_ref.shape()));
  }
  const Projection proj = warp_coordinates(cam, depth, twist);
  const Sampled sampled = bilinear_sample(f_other, proj.coords);
  const Mask valid = depth.valid & proj.front & sampled.valid;
  Tensor dist = channel_l2_norm(sub(sampled.values, f_ref));
  return {apply_mask(dist, valid), valid};
}

CostMap average_cost(const std::vector<CostMap>& maps) {
  if (maps.empty()) throw std::invalid_argument("average_cost: empty list");
  const Shape& shape = maps[0].values.shape();
  const int h = shape[1], w = shape[2];
  const std::size_t n = std::size_t(h) * w;
  std::vector<Tensor> inputs;
  std::vector<Mask> masks;
  for (const auto& m : maps) {
    if (m.values.shape() != shape) {
      throw DimensionError("average_cost: shapes differ: " + shape_str(shape) + " vs " + shape_str(m.values.shape()));
    }
    inputs.push_back(m.values);
    masks.push_back(m.valid);
  }
  std::vector<Scalar> counts(n, 0);
  Mask valid(h, w, false);
  for (const auto& m : masks)
    for (std::size_t p = 0; p < n; ++p) counts[p] += m.values[p] ? 1 : 0;
  std::vector<Scalar> out(n, 0);
  for (std::size_t k = 0; k < maps.size(); ++k) {
    auto v = maps[k].values.data();
    for (std::size_t p = 0; p < n; ++p)
      if (masks[k].values[p]) out[p] += v[p];
  }
  for (std::size_t p = 0; p < n; ++p) {
    if (counts[p] > 0) {
      out[p] /= counts[p];
      valid.values[p] = 1;
    }
  }
  Tensor values = detail::make_result(shape, std::move(out), inputs, [=](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      auto& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      auto& g = in.ensure_grad();
      for (std::size_t p = 0; p < n; ++p)
        if (masks[k].values[p]) g[p] += self.grad[p] / counts[p];
    }
  });
  return {values, valid};
}

DepthMap downsample_depth(const DepthMap& depth, int factor) {
  const int h = depth.height(), w = depth.width();
  if (factor < 1 || h % factor != 0 || w % factor != 0) {
    throw DimensionError("downsample_depth: " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by " + std::to_string(factor));
  }
  const int oh = h / factor, ow = w / factor;
  Mask m(oh, ow, false);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) m.set(y, x, depth.valid.at(y * factor, x * factor));
  return {resize_nearest(depth.values, oh, ow), std::move(m)};
}

std::array<double, 16> pose_exp(const se3::Twist& twist) { return se3::to_matrix(se3::exp(twist)); }

std::array<double, 16> pose_compose(const std::array<double, 16>& a, const std::array<double, 16>& b) {
  return se3::to_matrix(se3::compose(se3::from_matrix(a), se3::from_matrix(b)));
}

std::array<double, 16> pose_inverse(const std::array<double, 16>& a) {
  return se3::to_matrix(se3::inverse(se3::from_matrix(a)));
}

Tensor canonicalize_twist(const Tensor& twist) {
  se3::Twist t;
  for (int k = 0; k < 6; ++k) t[k] = static_cast<double>(twist.data()[k]);
  const double n = std::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2]);
  if (n < std::numbers::pi) return twist;
  const se3::Twist c = se3::canonicalize(t);
  return Tensor(Shape{6}, std::vector<Scalar>(c.begin(), c.end()), false);
}

}  // namespace ctad
