// SPDX-License-Identifier: Apache-2.0
//
// SE(3) exponential/logarithm on 6-vector twists (omega, rho).
//
// exp(omega, rho) = [ R(omega) | V(omega) rho ], with
//   R = I + A [w]x + B [w]x^2,  V = I + B [w]x + C [w]x^2,
//   A = sin(t)/t, B = (1 - cos t)/t^2, C = (t - sin t)/t^3, t = |omega|.
// Functions are templated on the scalar so the same code runs on Jet<6> to
// obtain exact partial derivatives with respect to the twist.

#ifndef CTAD_SE3_HPP_
#define CTAD_SE3_HPP_

#include <array>
#include <cmath>

namespace ctad::se3 {

/// Forward-mode dual number with N infinitesimal parts.
template <int N>
struct Jet {
  double a = 0;
  std::array<double, N> v{};

  Jet() = default;
  Jet(double value) : a(value) {}  // NOLINT: implicit lift of constants
  static Jet variable(double value, int k) {
    Jet j(value);
    j.v[k] = 1;
    return j;
  }
};

template <int N>
Jet<N> operator+(Jet<N> x, const Jet<N>& y) {
  x.a += y.a;
  for (int k = 0; k < N; ++k) x.v[k] += y.v[k];
  return x;
}
template <int N>
Jet<N> operator-(Jet<N> x, const Jet<N>& y) {
  x.a -= y.a;
  for (int k = 0; k < N; ++k) x.v[k] -= y.v[k];
  return x;
}
template <int N>
Jet<N> operator-(Jet<N> x) {
  x.a = -x.a;
  for (auto& d : x.v) d = -d;
  return x;
}
template <int N>
Jet<N> operator*(const Jet<N>& x, const Jet<N>& y) {
  Jet<N> r(x.a * y.a);
  for (int k = 0; k < N; ++k) r.v[k] = x.v[k] * y.a + x.a * y.v[k];
  return r;
}
template <int N>
Jet<N> operator/(const Jet<N>& x, const Jet<N>& y) {
  Jet<N> r(x.a / y.a);
  for (int k = 0; k < N; ++k) r.v[k] = (x.v[k] - r.a * y.v[k]) / y.a;
  return r;
}
template <int N>
Jet<N> operator*(double s, Jet<N> x) {
  x.a *= s;
  for (auto& d : x.v) d *= s;
  return x;
}
template <int N>
bool operator<(const Jet<N>& x, double s) {
  return x.a < s;
}
template <int N>
Jet<N> sin(const Jet<N>& x) {
  Jet<N> r(std::sin(x.a));
  const double d = std::cos(x.a);
  for (int k = 0; k < N; ++k) r.v[k] = d * x.v[k];
  return r;
}
template <int N>
Jet<N> cos(const Jet<N>& x) {
  Jet<N> r(std::cos(x.a));
  const double d = -std::sin(x.a);
  for (int k = 0; k < N; ++k) r.v[k] = d * x.v[k];
  return r;
}
template <int N>
Jet<N> sqrt(const Jet<N>& x) {
  Jet<N> r(std::sqrt(x.a));
  const double d = 0.5 / r.a;
  for (int k = 0; k < N; ++k) r.v[k] = d * x.v[k];
  return r;
}

template <class T>
using Vec3 = std::array<T, 3>;
/// Row-major 3x3.
template <class T>
using Mat3 = std::array<T, 9>;

template <class T>
struct Rigid {
  Mat3<T> rotation;
  Vec3<T> translation;
};

/// Coefficients A, B, C as functions of theta^2, with series near zero.
template <class T>
void exp_coefficients(const T& theta_sq, T& a, T& b, T& c) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  if (theta_sq < 1e-4) {
    const T t2 = theta_sq;
    const T t4 = t2 * t2;
    const T t6 = t4 * t2;
    a = T(1.0) - (1.0 / 6.0) * t2 + (1.0 / 120.0) * t4 - (1.0 / 5040.0) * t6;
    b = T(0.5) - (1.0 / 24.0) * t2 + (1.0 / 720.0) * t4 - (1.0 / 40320.0) * t6;
    c = T(1.0 / 6.0) - (1.0 / 120.0) * t2 + (1.0 / 5040.0) * t4 - (1.0 / 362880.0) * t6;
    return;
  }
  const T theta = sqrt(theta_sq);
  const T s = sin(theta);
  const T half = sin(0.5 * theta);
  a = s / theta;
  b = 2.0 * (half * half) / theta_sq;
  c = (theta - s) / (theta_sq * theta);
}

/// exp of twist (w0, w1, w2, r0, r1, r2).
template <class T>
Rigid<T> exp(const std::array<T, 6>& twist) {
  const T& x = twist[0];
  const T& y = twist[1];
  const T& z = twist[2];
  const T theta_sq = x * x + y * y + z * z;
  T a, b, c;
  exp_coefficients(theta_sq, a, b, c);
  // [w]x and [w]x^2
  const Mat3<T> k{T(0.0), -z, y, z, T(0.0), -x, -y, x, T(0.0)};
  const Mat3<T> k2{-(y * y + z * z), x * y, x * z, x * y, -(x * x + z * z), y * z, x * z, y * z, -(x * x + y * y)};
  Rigid<T> out;
  Mat3<T> v;
  for (int i = 0; i < 9; ++i) {
    const T id = (i % 4 == 0) ? T(1.0) : T(0.0);
    out.rotation[i] = id + a * k[i] + b * k2[i];
    v[i] = id + b * k[i] + c * k2[i];
  }
  for (int r = 0; r < 3; ++r) {
    out.translation[r] = v[3 * r] * twist[3] + v[3 * r + 1] * twist[4] + v[3 * r + 2] * twist[5];
  }
  return out;
}

using Twist = std::array<double, 6>;
using Transform = Rigid<double>;

inline Transform identity() { return {{1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0}}; }

/// a * b (apply b first).
inline Transform compose(const Transform& a, const Transform& b) {
  Transform out;
  for (int r = 0; r < 3; ++r) {
    for (int col = 0; col < 3; ++col) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a.rotation[3 * r + k] * b.rotation[3 * k + col];
      out.rotation[3 * r + col] = s;
    }
    double t = a.translation[r];
    for (int k = 0; k < 3; ++k) t += a.rotation[3 * r + k] * b.translation[k];
    out.translation[r] = t;
  }
  return out;
}

inline Transform inverse(const Transform& p) {
  Transform out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.rotation[3 * r + c] = p.rotation[3 * c + r];
  for (int r = 0; r < 3; ++r) {
    double t = 0;
    for (int k = 0; k < 3; ++k) t -= out.rotation[3 * r + k] * p.translation[k];
    out.translation[r] = t;
  }
  return out;
}

inline Vec3<double> apply(const Transform& p, const Vec3<double>& x) {
  Vec3<double> y;
  for (int r = 0; r < 3; ++r) {
    y[r] = p.translation[r];
    for (int k = 0; k < 3; ++k) y[r] += p.rotation[3 * r + k] * x[k];
  }
  return y;
}

/// 4x4 row-major homogeneous matrix.
std::array<double, 16> to_matrix(const Transform& p);

/// Inverse of exp; the returned rotation vector has norm in [0, pi].
Twist log(const Transform& p);

inline Transform exp(const Twist& t) { return exp<double>(t); }

/// Equivalent twist with |omega| < pi (unchanged when already canonical).
Twist canonicalize(const Twist& t);

}  // namespace ctad::se3

#endif  // CTAD_SE3_HPP_
