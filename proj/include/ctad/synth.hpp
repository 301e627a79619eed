// SPDX-License-Identifier: Apache-2.0
//
// Deterministic ray-cast renderer for textured planes and moving quads,
// producing image sequences with exact depth, camera poses and
// moving-object masks.

#ifndef CTAD_SYNTH_HPP_
#define CTAD_SYNTH_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctad/geometry.hpp"
#include "ctad/se3.hpp"

namespace ctad::synth {

using Vec3 = se3::Vec3<double>;

/// Infinite plane {X : normal . X = offset} in world coordinates.
struct PlaneSpec {
  Vec3 normal{0, 0, -1};
  double offset = -10;
  Vec3 color{1, 1, 1};
  double texture_scale = 1.0;  // world units per noise cell
  std::uint64_t texture_seed = 0;
};

/// Rectangle centred at `center` spanning +-half_u along axis_u and
/// +-half_v along axis_v; translates by `velocity` every frame.
struct QuadSpec {
  Vec3 center{0, 0, 5};
  Vec3 axis_u{1, 0, 0};
  Vec3 axis_v{0, 1, 0};
  double half_u = 1;
  double half_v = 1;
  Vec3 velocity{0, 0, 0};
  Vec3 color{1, 1, 1};
  double texture_scale = 0.25;
  std::uint64_t texture_seed = 0;

  bool moving() const { return velocity[0] != 0 || velocity[1] != 0 || velocity[2] != 0; }
};

struct SceneSpec {
  std::uint64_t seed = 7;
  int height = 64;
  int width = 96;
  int frames = 24;
  /// Defaults to fx = fy = 0.7 W and a centred principal point.
  std::optional<Camera> camera;
  /// Camera motion between consecutive frames, expressed in the current
  /// camera frame: c2w(k+1) = c2w(k) * exp(motion[k]). A single entry is
  /// reused for every frame.
  std::vector<se3::Twist> camera_motion{{0, 0.004, 0, 0.06, 0, 0.08}};
  std::vector<PlaneSpec> planes;
  std::vector<QuadSpec> quads;
  double d_min = 0.5;
  double d_max = 20.0;

  Camera resolved_camera() const;
  se3::Twist motion(int frame) const;
  /// Throws std::invalid_argument on inconsistent sizes or degenerate
  /// geometry (zero normals, non-orthogonal quad axes, ...).
  void validate() const;
};

SceneSpec default_scene();
SceneSpec parse_scene(const std::string& json_text);
std::string scene_to_json(const SceneSpec& spec);

struct Hit {
  double depth = 0;  // camera-frame Z; 0 when nothing is hit
  int surface = -1;  // planes first, then quads
  bool moving = false;
  double shade = 0;  // texture value in [0, 1]
  Vec3 color{0, 0, 0};
};

struct Frame {
  int index = 0;
  std::vector<float> image;     // [3,H,W], 8-bit quantized values in [0, 1]
  std::vector<double> radiance; // [3,H,W] before quantization (empty after loading from disk)
  std::vector<float> depth;     // [H,W]; 0 where invalid
  std::vector<std::uint8_t> dynamic;  // [H,W]
  se3::Twist world_to_camera{};       // log of the world-to-camera transform
};

struct Sequence {
  Camera camera;
  int height = 0, width = 0;
  std::vector<Frame> frames;
  std::vector<std::string> warnings;
};

/// Camera-to-world transform of `frame`.
se3::Transform camera_to_world(const SceneSpec& spec, int frame);
/// Analytic ray cast through pixel (u, v) of `frame`.
Hit cast(const SceneSpec& spec, int frame, double u, double v);

/// Renders every frame. Objects never visible produce a warning entry.
Sequence render(const SceneSpec& spec);

/// Transform taking points from `ref` camera coordinates to `other`.
se3::Transform relative_pose(const Frame& ref, const Frame& other);

struct Sample {
  int reference = 0;
  std::vector<int> neighbors;
  Tensor image_ref;                    // [3,H,W]
  std::vector<Tensor> images;          // per neighbour
  DepthMap gt_depth;                   // [1,H,W]
  std::vector<se3::Twist> gt_poses;    // reference -> neighbour
  Mask dynamic;
};

/// Samples for every frame whose neighbours (frame + offset) all exist.
std::vector<Sample> make_samples(const Sequence& seq, const std::vector<int>& offsets, double d_min = 0,
                                 double d_max = 1e30);

/// Deterministic split of reference frames; floor(train_frac * count)
/// training samples. Throws std::invalid_argument if either side is empty.
std::pair<std::vector<Sample>, std::vector<Sample>> make_splits(const std::vector<Sample>& samples,
                                                                double train_frac, std::uint64_t seed);

/// Two-octave value noise in [0, 1].
double value_noise(double x, double y, std::uint64_t seed);

}  // namespace ctad::synth

#endif  // CTAD_SYNTH_HPP_
