// SPDX-License-Identifier: Apache-2.0
//
// Pinhole camera, differentiable rigid warping and feature-space cost maps.

#ifndef CTAD_GEOMETRY_HPP_
#define CTAD_GEOMETRY_HPP_

#include <array>
#include <vector>

#include "ctad/se3.hpp"
#include "ctad/tensor.hpp"

namespace ctad {

/// Points with Z at or below this are treated as behind the camera.
inline constexpr double kZEps = 1e-6;

struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;

  /// Throws std::invalid_argument unless fx, fy > 0 and the principal
  /// point lies inside the image.
  void validate() const;
  /// Intrinsics and extent divided by `factor` (feature-level camera).
  Camera downscaled(int factor) const;
};

/// Relative rigid transform stored as a differentiable twist [6]
/// (rotation vector, then translation).
struct Pose {
  Tensor twist;

  static Pose identity();
  static Pose from_twist(const se3::Twist& t, bool requires_grad = false);
  se3::Twist values() const;
  se3::Transform transform() const { return se3::exp(values()); }
};

struct DepthMap {
  Tensor values;  // [1,H,W]
  Mask valid;

  int height() const { return values.dim(1); }
  int width() const { return values.dim(2); }
  /// All pixels valid.
  static DepthMap dense(Tensor values);
};

struct CostMap {
  Tensor values;  // [1,H,W], zero on invalid pixels
  Mask valid;
};

struct Projection {
  Tensor coords;  // [2,H,W] pixel coordinates (x, y)
  Mask front;     // Z > kZEps
};

/// [2,H,W] grid holding each pixel's own (x, y).
Tensor pixel_grid(int height, int width);

/// u = fx X/Z + cx, v = fy Y/Z + cy. Pixels behind the camera get
/// coordinates (-1, -1), a false front flag and no gradient.
Projection project(const Camera& cam, const Tensor& points);

/// Back-projects every pixel to 3D. Throws if a valid pixel has depth <= 0.
Tensor unproject(const Camera& cam, const DepthMap& depth);

/// Applies exp(twist) to every point of a [3,H,W] cloud; differentiable
/// with respect to both the twist and the points.
Tensor rigid_transform(const Tensor& twist, const Tensor& points);

/// Pixel coordinates of every reference pixel after moving it into the
/// other camera with `twist`.
Projection warp_coordinates(const Camera& cam, const DepthMap& depth, const Tensor& twist);

/// Per-pixel L2 distance between f_ref and f_other sampled at the warped
/// location. Invalid pixels (behind camera, outside the image, invalid
/// depth) carry cost 0.
CostMap cost_map(const Tensor& f_ref, const Tensor& f_other, const Camera& cam, const DepthMap& depth,
                 const Tensor& twist);

/// Per-pixel mean over the maps valid at that pixel.
CostMap average_cost(const std::vector<CostMap>& maps);

/// Nearest-neighbour downsampling by an integer factor (keeps pixel
/// (f*i, f*j)); values stay differentiable.
DepthMap downsample_depth(const DepthMap& depth, int factor);

std::array<double, 16> pose_exp(const se3::Twist& twist);
std::array<double, 16> pose_compose(const std::array<double, 16>& a, const std::array<double, 16>& b);
std::array<double, 16> pose_inverse(const std::array<double, 16>& a);

/// Returns `twist` itself when |omega| < pi, otherwise a detached
/// equivalent twist with |omega| < pi.
Tensor canonicalize_twist(const Tensor& twist);

}  // namespace ctad

#endif  // CTAD_GEOMETRY_HPP_
