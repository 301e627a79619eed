// SPDX-License-Identifier: Apache-2.0
//
// Naive reference implementations used as test oracles. They only touch
// plain std::vector<double> buffers and Eigen, never library code.

#ifndef CTAD_TESTS_ORACLES_HPP_
#define CTAD_TESTS_ORACLES_HPP_

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace oracle {

using Buf = std::vector<double>;

// Direct definition of a strided, zero-padded cross-correlation.
inline Buf conv2d(const Buf& x, int cin, int h, int w, const Buf& weight, int cout, int k, const Buf& bias,
                  int stride, int pad, int* out_h = nullptr, int* out_w = nullptr) {
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  if (out_h) *out_h = oh;
  if (out_w) *out_w = ow;
  Buf out(std::size_t(cout) * oh * ow, 0.0);
  for (int o = 0; o < cout; ++o)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        double s = bias.empty() ? 0.0 : bias[o];
        for (int c = 0; c < cin; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y * stride - pad + ky;
              const int ix = xx * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              s += weight[((o * cin + c) * k + ky) * k + kx] * x[(c * h + iy) * w + ix];
            }
        out[(o * oh + y) * ow + xx] = s;
      }
  return out;
}

// 1x1 convolution as a per-pixel matrix-vector product.
inline Buf pointwise(const Buf& x, int cin, int n, const Buf& weight, const Buf& bias, int cout) {
  Buf out(std::size_t(cout) * n);
  for (int o = 0; o < cout; ++o)
    for (int p = 0; p < n; ++p) {
      double s = bias[o];
      for (int c = 0; c < cin; ++c) s += weight[o * cin + c] * x[c * n + p];
      out[o * n + p] = s;
    }
  return out;
}

struct Projection1x1 {
  Buf weight;  // [out, in]
  Buf bias;
};

// Per-query softmax over keys of (q . k) / sqrt(cqk), weighted sum of the
// values, plus the residual.
inline Buf attention(const Projection1x1& theta, const Projection1x1& phi, const Projection1x1& sigma, int cqk,
                     int cv, const Buf& ctx, int cc, const Buf& tmp, int ct, const Buf& embed, int n) {
  Buf q = pointwise(ctx, cc, n, theta.weight, theta.bias, cqk);
  Buf k = pointwise(ctx, cc, n, phi.weight, phi.bias, cqk);
  const Buf v = pointwise(tmp, ct, n, sigma.weight, sigma.bias, cv);
  if (!embed.empty()) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      q[i] += embed[i];
      k[i] += embed[i];
    }
  }
  Buf out(std::size_t(cv) * n);
  for (int qi = 0; qi < n; ++qi) {
    std::vector<double> score(n);
    double mx = -1e300;
    for (int kj = 0; kj < n; ++kj) {
      double s = 0;
      for (int c = 0; c < cqk; ++c) s += q[c * n + qi] * k[c * n + kj];
      score[kj] = s / std::sqrt(double(cqk));
      mx = std::max(mx, score[kj]);
    }
    double z = 0;
    for (int kj = 0; kj < n; ++kj) {
      score[kj] = std::exp(score[kj] - mx);
      z += score[kj];
    }
    for (int c = 0; c < cv; ++c) {
      double s = 0;
      for (int kj = 0; kj < n; ++kj) s += score[kj] / z * v[c * n + kj];
      out[c * n + qi] = s + tmp[c * n + qi];
    }
  }
  return out;
}

// Rigid transform of a twist (rotation vector, translation part) through
// the 4x4 matrix exponential of its hat matrix.
inline Eigen::Matrix4d twist_exp(const std::array<double, 6>& t) {
  Eigen::Matrix4d xi = Eigen::Matrix4d::Zero();
  xi(0, 1) = -t[2];
  xi(0, 2) = t[1];
  xi(1, 0) = t[2];
  xi(1, 2) = -t[0];
  xi(2, 0) = -t[1];
  xi(2, 1) = t[0];
  xi(0, 3) = t[3];
  xi(1, 3) = t[4];
  xi(2, 3) = t[5];
  return xi.exp();
}

struct Pinhole {
  double fx, fy, cx, cy;
};

struct Bilinear {
  std::vector<double> values;
  bool inside = false;
};

inline Bilinear sample(const Buf& f, int c, int h, int w, double x, double y) {
  Bilinear out;
  out.inside = x >= 0 && y >= 0 && x <= w - 1 && y <= h - 1;
  x = std::clamp(x, 0.0, double(w - 1));
  y = std::clamp(y, 0.0, double(h - 1));
  const int x0 = std::min(int(std::floor(x)), w - 2);
  const int y0 = std::min(int(std::floor(y)), h - 2);
  const double ax = x - x0, ay = y - y0;
  out.values.resize(c);
  for (int ch = 0; ch < c; ++ch) {
    auto at = [&](int yy, int xx) { return f[(ch * h + yy) * w + xx]; };
    out.values[ch] = (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
                     ay * ((1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
  }
  return out;
}

struct CostOut {
  Buf values;
  std::vector<int> valid;
};

// Per pixel: back-project with depth, transform, project, sample and take
// the channel L2 distance to the reference feature.
inline CostOut cost_map(const Buf& fr, const Buf& fi, int c, int h, int w, const Pinhole& cam, const Buf& depth,
                        const std::array<double, 6>& twist) {
  const Eigen::Matrix4d T = twist_exp(twist);
  CostOut out;
  out.values.assign(std::size_t(h) * w, 0.0);
  out.valid.assign(std::size_t(h) * w, 0);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const double d = depth[v * w + u];
      const Eigen::Vector4d p((u - cam.cx) * d / cam.fx, (v - cam.cy) * d / cam.fy, d, 1.0);
      const Eigen::Vector4d q = T * p;
      if (q.z() <= 1e-6) continue;
      const double x = cam.fx * q.x() / q.z() + cam.cx;
      const double y = cam.fy * q.y() / q.z() + cam.cy;
      const Bilinear s = sample(fi, c, h, w, x, y);
      if (!s.inside) continue;
      double acc = 0;
      for (int ch = 0; ch < c; ++ch) {
        const double diff = s.values[ch] - fr[(ch * h + v) * w + u];
        acc += diff * diff;
      }
      out.values[v * w + u] = std::sqrt(acc);
      out.valid[v * w + u] = 1;
    }
  return out;
}

// Mean over pixels (in front under both transforms) of the L1 distance
// between the two reprojections of the ground-truth point cloud.
inline double reprojection_error(const std::array<double, 6>& est, const std::array<double, 6>& gt, int h, int w,
                                 const Pinhole& cam, const Buf& depth, const std::vector<int>& valid) {
  const Eigen::Matrix4d Te = twist_exp(est);
  const Eigen::Matrix4d Tg = twist_exp(gt);
  double sum = 0;
  int count = 0;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      if (!valid[v * w + u]) continue;
      const double d = depth[v * w + u];
      const Eigen::Vector4d p((u - cam.cx) * d / cam.fx, (v - cam.cy) * d / cam.fy, d, 1.0);
      const Eigen::Vector4d a = Te * p, b = Tg * p;
      if (a.z() <= 1e-6 || b.z() <= 1e-6) continue;
      const double du = cam.fx * a.x() / a.z() - cam.fx * b.x() / b.z();
      const double dv = cam.fy * a.y() / a.z() - cam.fy * b.y() / b.z();
      sum += std::abs(du) + std::abs(dv);
      ++count;
    }
  return count ? sum / count : 0.0;
}

}  // namespace oracle

#endif  // CTAD_TESTS_ORACLES_HPP_
