// SPDX-License-Identifier: Apache-2.0

#include "ctad/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace ctad::synth {

namespace {

using json = nlohmann::json;

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 axpy(const Vec3& a, double s, const Vec3& b) { return {a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]}; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  return {a[0] / n, a[1] / n, a[2] / n};
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  const std::uint64_t h = splitmix(seed ^ splitmix(static_cast<std::uint64_t>(ix) ^ splitmix(static_cast<std::uint64_t>(iy))));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }

double noise_octave(double x, double y, std::uint64_t seed) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double tx = fade(x - fx), ty = fade(y - fy);
  const double v00 = lattice(ix, iy, seed), v10 = lattice(ix + 1, iy, seed);
  const double v01 = lattice(ix, iy + 1, seed), v11 = lattice(ix + 1, iy + 1, seed);
  const double a = v00 + (v10 - v00) * tx;
  const double b = v01 + (v11 - v01) * tx;
  return a + (b - a) * ty;
}

// Orthonormal in-plane axes for texturing an infinite plane.
std::pair<Vec3, Vec3> plane_axes(const Vec3& normal) {
  const Vec3 n = normalized(normal);
  const Vec3 helper = std::abs(n[1]) < 0.9 ? Vec3{0, 1, 0} : Vec3{1, 0, 0};
  const Vec3 e1 = normalized(cross(helper, n));
  return {e1, cross(n, e1)};
}

std::uint64_t texture_key(const SceneSpec& spec, std::uint64_t object_seed, std::uint64_t index) {
  return splitmix(spec.seed * 0x100000001b3ull ^ splitmix(object_seed + 0x51ed27u * (index + 1)));
}

Vec3 read_vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument(std::string("scene: ") + what + " must be [x,y,z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

se3::Twist read_twist(const json& j) {
  if (!j.is_array() || j.size() != 6) throw std::invalid_argument("scene: twist must have 6 numbers");
  se3::Twist t;
  for (int k = 0; k < 6; ++k) t[k] = j[k].get<double>();
  return t;
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const char* where) {
  if (!obj.is_object()) throw std::invalid_argument(std::string("scene: ") + where + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }) == allowed.end()) {
      throw std::invalid_argument(std::string("scene: unknown key '") + it.key() + "' in " + where);
    }
  }
}

json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

}  // namespace

double value_noise(double x, double y, std::uint64_t seed) {
  return 0.8 * noise_octave(x, y, seed) + 0.2 * noise_octave(2 * x + 17.25, 2 * y + 5.5, splitmix(seed));
}

Camera SceneSpec::resolved_camera() const {
  if (camera) return *camera;
  Camera c;
  c.fx = c.fy = 0.7 * width;
  c.cx = 0.5 * (width - 1);
  c.cy = 0.5 * (height - 1);
  c.width = width;
  c.height = height;
  return c;
}

se3::Twist SceneSpec::motion(int frame) const {
  if (camera_motion.empty()) return {};
  return camera_motion[std::min<std::size_t>(static_cast<std::size_t>(frame), camera_motion.size() - 1)];
}

void SceneSpec::validate() const {
  if (height <= 0 || width <= 0) throw std::invalid_argument("scene: image size must be positive");
  if (frames < 1) throw std::invalid_argument("scene: need at least one frame");
  if (!(d_min > 0) || !(d_max > d_min)) throw std::invalid_argument("scene: need 0 < d_min < d_max");
  Camera c = resolved_camera();
  if (c.width != width || c.height != height) throw std::invalid_argument("scene: camera extent differs from image size");
  c.validate();
  for (const auto& p : planes) {
    if (!(norm(p.normal) > 0)) throw std::invalid_argument("scene: plane normal must be nonzero");
    if (!(p.texture_scale > 0)) throw std::invalid_argument("scene: texture_scale must be positive");
  }
  for (const auto& q : quads) {
    if (std::abs(norm(q.axis_u) - 1) > 1e-9 || std::abs(norm(q.axis_v) - 1) > 1e-9 ||
        std::abs(dot(q.axis_u, q.axis_v)) > 1e-9) {
      throw std::invalid_argument("scene: quad axes must be orthonormal");
    }
    if (!(q.half_u > 0) || !(q.half_v > 0)) throw std::invalid_argument("scene: quad half sizes must be positive");
    if (!(q.texture_scale > 0)) throw std::invalid_argument("scene: texture_scale must be positive");
  }
}

SceneSpec default_scene() {
  SceneSpec s;
  PlaneSpec wall;
  wall.normal = normalized(Vec3{0.25, -0.12, -1.0});
  wall.offset = dot(wall.normal, Vec3{0, 0, 12});
  wall.color = {0.85, 0.8, 0.7};
  wall.texture_scale = 3.2;
  wall.texture_seed = 1;
  s.planes.push_back(wall);

  QuadSpec a;
  a.center = {-1.7, 0.3, 6.0};
  a.half_u = 1.1;
  a.half_v = 1.4;
  a.color = {0.95, 0.55, 0.25};
  a.texture_scale = 1.5;
  a.texture_seed = 2;
  QuadSpec b;
  b.center = {2.0, -0.8, 8.5};
  b.axis_u = normalized(Vec3{0.866, 0, 0.5});
  b.half_u = 1.5;
  b.half_v = 1.2;
  b.color = {0.4, 0.85, 0.45};
  b.texture_scale = 2.0;
  b.texture_seed = 3;
  QuadSpec mover;
  mover.center = {2.2, 0.6, 5.0};
  mover.half_u = 0.9;
  mover.half_v = 0.9;
  mover.velocity = {-0.08, 0, 0};
  mover.color = {0.3, 0.45, 0.95};
  mover.texture_scale = 1.3;
  mover.texture_seed = 4;
  s.quads = {a, b, mover};
  return s;
}

SceneSpec parse_scene(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("scene: invalid JSON: ") + e.what());
  }
  check_keys(j, {"seed", "height", "width", "frames", "d_min", "d_max", "camera", "camera_motion", "planes", "quads"},
             "scene");
  SceneSpec s;
  s.planes.clear();
  s.quads.clear();
  try {
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("height")) s.height = j["height"].get<int>();
    if (j.contains("width")) s.width = j["width"].get<int>();
    if (j.contains("frames")) s.frames = j["frames"].get<int>();
    if (j.contains("d_min")) s.d_min = j["d_min"].get<double>();
    if (j.contains("d_max")) s.d_max = j["d_max"].get<double>();
    if (j.contains("camera")) {
      const auto& c = j["camera"];
      check_keys(c, {"fx", "fy", "cx", "cy"}, "camera");
      Camera cam;
      cam.fx = c.at("fx").get<double>();
      cam.fy = c.at("fy").get<double>();
      cam.cx = c.at("cx").get<double>();
      cam.cy = c.at("cy").get<double>();
      cam.width = s.width;
      cam.height = s.height;
      s.camera = cam;
    }
    if (j.contains("camera_motion")) {
      const auto& m = j["camera_motion"];
      s.camera_motion.clear();
      if (m.is_array() && !m.empty() && m[0].is_array()) {
        for (const auto& t : m) s.camera_motion.push_back(read_twist(t));
      } else {
        s.camera_motion.push_back(read_twist(m));
      }
    }
    for (const auto& p : j.value("planes", json::array())) {
      check_keys(p, {"normal", "offset", "color", "texture_scale", "texture_seed"}, "plane");
      PlaneSpec ps;
      ps.normal = read_vec3(p.at("normal"), "normal");
      ps.offset = p.at("offset").get<double>();
      if (p.contains("color")) ps.color = read_vec3(p["color"], "color");
      ps.texture_scale = p.value("texture_scale", ps.texture_scale);
      ps.texture_seed = p.value("texture_seed", ps.texture_seed);
      s.planes.push_back(ps);
    }
    for (const auto& q : j.value("quads", json::array())) {
      check_keys(q, {"center", "axis_u", "axis_v", "half_u", "half_v", "velocity", "color", "texture_scale",
                     "texture_seed"},
                 "quad");
      QuadSpec qs;
      qs.center = read_vec3(q.at("center"), "center");
      if (q.contains("axis_u")) qs.axis_u = read_vec3(q["axis_u"], "axis_u");
      if (q.contains("axis_v")) qs.axis_v = read_vec3(q["axis_v"], "axis_v");
      qs.half_u = q.value("half_u", qs.half_u);
      qs.half_v = q.value("half_v", qs.half_v);
      if (q.contains("velocity")) qs.velocity = read_vec3(q["velocity"], "velocity");
      if (q.contains("color")) qs.color = read_vec3(q["color"], "color");
      qs.texture_scale = q.value("texture_scale", qs.texture_scale);
      qs.texture_seed = q.value("texture_seed", qs.texture_seed);
      s.quads.push_back(qs);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("scene: ") + e.what());
  }
  s.validate();
  return s;
}

std::string scene_to_json(const SceneSpec& s) {
  json j;
  j["seed"] = s.seed;
  j["height"] = s.height;
  j["width"] = s.width;
  j["frames"] = s.frames;
  j["d_min"] = s.d_min;
  j["d_max"] = s.d_max;
  if (s.camera) j["camera"] = {{"fx", s.camera->fx}, {"fy", s.camera->fy}, {"cx", s.camera->cx}, {"cy", s.camera->cy}};
  json motion = json::array();
  for (const auto& t : s.camera_motion) motion.push_back(json(std::vector<double>(t.begin(), t.end())));
  j["camera_motion"] = motion;
  j["planes"] = json::array();
  for (const auto& p : s.planes) {
    j["planes"].push_back({{"normal", vec_json(p.normal)},
                           {"offset", p.offset},
                           {"color", vec_json(p.color)},
                           {"texture_scale", p.texture_scale},
                           {"texture_seed", p.texture_seed}});
  }
  j["quads"] = json::array();
  for (const auto& q : s.quads) {
    j["quads"].push_back({{"center", vec_json(q.center)},
                          {"axis_u", vec_json(q.axis_u)},
                          {"axis_v", vec_json(q.axis_v)},
                          {"half_u", q.half_u},
                          {"half_v", q.half_v},
                          {"velocity", vec_json(q.velocity)},
                          {"color", vec_json(q.color)},
                          {"texture_scale", q.texture_scale},
                          {"texture_seed", q.texture_seed}});
  }
  return j.dump(2);
}

se3::Transform camera_to_world(const SceneSpec& spec, int frame) {
  se3::Transform c2w = se3::identity();
  for (int k = 0; k < frame; ++k) c2w = se3::compose(c2w, se3::exp(spec.motion(k)));
  return c2w;
}

namespace {

Hit cast_ray(const SceneSpec& spec, const se3::Transform& c2w, int frame, const Camera& cam, double u, double v) {
  const Vec3 dc{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
  Vec3 dir{};
  for (int r = 0; r < 3; ++r) dir[r] = c2w.rotation[3 * r] * dc[0] + c2w.rotation[3 * r + 1] * dc[1] + c2w.rotation[3 * r + 2] * dc[2];
  const Vec3& o = c2w.translation;
  Hit best;
  double best_t = std::numeric_limits<double>::infinity();
  const int np = static_cast<int>(spec.planes.size());
  for (int i = 0; i < np; ++i) {
    const auto& p = spec.planes[i];
    const double denom = dot(p.normal, dir);
    if (std::abs(denom) < 1e-12) continue;
    const double t = (p.offset - dot(p.normal, o)) / denom;
    if (!(t > 1e-9) || t >= best_t) continue;
    const Vec3 x = axpy(o, t, dir);
    const auto [e1, e2] = plane_axes(p.normal);
    best_t = t;
    best.surface = i;
    best.moving = false;
    best.shade = value_noise(dot(x, e1) / p.texture_scale, dot(x, e2) / p.texture_scale,
                             texture_key(spec, p.texture_seed, static_cast<std::uint64_t>(i)));
    best.color = p.color;
  }
  for (int i = 0; i < static_cast<int>(spec.quads.size()); ++i) {
    const auto& q = spec.quads[i];
    const Vec3 c = axpy(q.center, static_cast<double>(frame), q.velocity);
    const Vec3 n = cross(q.axis_u, q.axis_v);
    const double denom = dot(n, dir);
    if (std::abs(denom) < 1e-12) continue;
    const double t = (dot(n, c) - dot(n, o)) / denom;
    if (!(t > 1e-9) || t >= best_t) continue;
    const Vec3 x = axpy(o, t, dir);
    const Vec3 rel{x[0] - c[0], x[1] - c[1], x[2] - c[2]};
    const double a = dot(rel, q.axis_u), b = dot(rel, q.axis_v);
    if (std::abs(a) > q.half_u || std::abs(b) > q.half_v) continue;
    best_t = t;
    best.surface = np + i;
    best.moving = q.moving();
    best.shade = value_noise(a / q.texture_scale, b / q.texture_scale,
                             texture_key(spec, q.texture_seed, static_cast<std::uint64_t>(np + i)));
    best.color = q.color;
  }
  if (best.surface >= 0) best.depth = best_t;  // dc has unit Z, so ray parameter = camera depth
  return best;
}

}  // namespace

Hit cast(const SceneSpec& spec, int frame, double u, double v) {
  return cast_ray(spec, camera_to_world(spec, frame), frame, spec.resolved_camera(), u, v);
}

Sequence render(const SceneSpec& spec) {
  spec.validate();
  Sequence seq;
  seq.camera = spec.resolved_camera();
  seq.height = spec.height;
  seq.width = spec.width;
  const int h = spec.height, w = spec.width;
  const std::size_t plane = std::size_t(h) * w;
  std::vector<bool> seen(spec.planes.size() + spec.quads.size(), false);
  se3::Transform c2w = se3::identity();
  for (int f = 0; f < spec.frames; ++f) {
    if (f > 0) c2w = se3::compose(c2w, se3::exp(spec.motion(f - 1)));
    Frame fr;
    fr.index = f;
    fr.world_to_camera = se3::log(se3::inverse(c2w));
    fr.image.assign(3 * plane, 0.f);
    fr.radiance.assign(3 * plane, 0.0);
    fr.depth.assign(plane, 0.f);
    fr.dynamic.assign(plane, 0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const Hit hit = cast_ray(spec, c2w, f, seq.camera, x, y);
        const std::size_t p = std::size_t(y) * w + x;
        if (hit.surface < 0) continue;
        seen[hit.surface] = true;
        const double shade = 0.25 + 0.75 * hit.shade;
        for (int c = 0; c < 3; ++c) {
          const double r = std::clamp(hit.color[c] * shade, 0.0, 1.0);
          fr.radiance[c * plane + p] = r;
          fr.image[c * plane + p] = static_cast<float>(std::lround(r * 255.0) / 255.0);
        }
        if (hit.depth >= spec.d_min && hit.depth <= spec.d_max) fr.depth[p] = static_cast<float>(hit.depth);
        fr.dynamic[p] = hit.moving ? 1 : 0;
      }
    }
    seq.frames.push_back(std::move(fr));
  }
  for (std::size_t i = 0; i < spec.quads.size(); ++i) {
    if (!seen[spec.planes.size() + i]) {
      seq.warnings.push_back("quad " + std::to_string(i) + " is outside the view in every frame");
    }
  }
  return seq;
}

se3::Transform relative_pose(const Frame& ref, const Frame& other) {
  return se3::compose(se3::exp(other.world_to_camera), se3::inverse(se3::exp(ref.world_to_camera)));
}

std::vector<Sample> make_samples(const Sequence& seq, const std::vector<int>& offsets, double d_min, double d_max) {
  if (offsets.empty()) throw std::invalid_argument("make_samples: need at least one neighbour offset");
  const int n = static_cast<int>(seq.frames.size());
  const int h = seq.height, w = seq.width;
  const std::size_t plane = std::size_t(h) * w;
  auto image_tensor = [&](const Frame& f) {
    return Tensor(Shape{3, h, w}, std::vector<Scalar>(f.image.begin(), f.image.end()));
  };
  std::vector<Sample> out;
  for (int r = 0; r < n; ++r) {
    bool ok = true;
    for (int o : offsets) ok = ok && r + o >= 0 && r + o < n && o != 0;
    if (!ok) continue;
    const Frame& ref = seq.frames[r];
    Sample s;
    s.reference = r;
    s.image_ref = image_tensor(ref);
    std::vector<Scalar> d(plane);
    Mask valid(h, w, false), dyn(h, w, false);
    for (std::size_t p = 0; p < plane; ++p) {
      d[p] = ref.depth[p];
      valid.values[p] = ref.depth[p] > 0 && ref.depth[p] >= d_min && ref.depth[p] <= d_max;
      dyn.values[p] = ref.dynamic[p];
    }
    s.gt_depth = {Tensor(Shape{1, h, w}, std::move(d)), valid};
    s.dynamic = dyn;
    for (int o : offsets) {
      const Frame& other = seq.frames[r + o];
      s.neighbors.push_back(r + o);
      s.images.push_back(image_tensor(other));
      s.gt_poses.push_back(se3::log(relative_pose(ref, other)));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::pair<std::vector<Sample>, std::vector<Sample>> make_splits(const std::vector<Sample>& samples, double train_frac,
                                                                std::uint64_t seed) {
  if (samples.size() < 2) throw std::invalid_argument("make_splits: need at least 2 samples");
  if (!(train_frac > 0 && train_frac < 1)) throw std::invalid_argument("make_splits: train_frac must be in (0, 1)");
  const std::size_t n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(samples.size())));
  if (n_train == 0 || n_train == samples.size()) {
    throw std::invalid_argument("make_splits: fraction leaves one side empty");
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with an explicit generator keeps the split platform-independent.
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(samples[order[i]]);
  }
  return out;
}

}  // namespace ctad::synth
