// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "ctad/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ctad;

namespace {

synth::SceneSpec plane_scene(double depth, const se3::Twist& motion) {
  synth::SceneSpec s;
  s.height = 16;
  s.width = 24;
  s.frames = 3;
  s.camera_motion = {motion};
  synth::PlaneSpec p;
  p.offset = -depth;
  s.planes = {p};
  return s;
}

synth::SceneSpec static_default() {
  synth::SceneSpec s = synth::default_scene();
  s.frames = 6;
  for (auto& q : s.quads) q.velocity = {0, 0, 0};
  return s;
}

struct Warp {
  double u = 0, v = 0, z = 0;
};

// Moves pixel (x, y) of `ref` with its stored depth into `other` using the
// stored poses; all arithmetic through Eigen.
Warp warp_pixel(const synth::Sequence& seq, int ref, int other, int x, int y) {
  const auto& cam = seq.camera;
  const auto& fr = seq.frames[ref];
  const double d = fr.depth[std::size_t(y) * seq.width + x];
  const Eigen::Matrix4d t = oracle::twist_exp(seq.frames[other].world_to_camera) *
                            oracle::twist_exp(fr.world_to_camera).inverse();
  const Eigen::Vector4d p((x - cam.cx) * d / cam.fx, (y - cam.cy) * d / cam.fy, d, 1.0);
  const Eigen::Vector4d q = t * p;
  return {cam.fx * q.x() / q.z() + cam.cx, cam.fy * q.y() / q.z() + cam.cy, q.z()};
}

bool inside(const synth::Sequence& seq, const Warp& w) {
  return w.z > 0 && w.u >= 0 && w.v >= 0 && w.u <= seq.width - 1 && w.v <= seq.height - 1;
}

// True when the warped point and all four bilinear taps see `surface` in
// frame `other`.
bool same_surface(const synth::SceneSpec& spec, int other, const Warp& w, int surface) {
  if (synth::cast(spec, other, w.u, w.v).surface != surface) return false;
  const int x0 = int(std::floor(w.u)), y0 = int(std::floor(w.v));
  for (int dy = 0; dy <= 1; ++dy)
    for (int dx = 0; dx <= 1; ++dx) {
      if (synth::cast(spec, other, x0 + dx, y0 + dy).surface != surface) return false;
    }
  return true;
}

std::vector<double> as_double(const std::vector<float>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(Render, FrontoParallelPlaneWithStaticCamera) {
  const synth::SceneSpec spec = plane_scene(5.0, {});
  const synth::Sequence seq = synth::render(spec);
  ASSERT_EQ(seq.frames.size(), 3u);
  for (const auto& f : seq.frames) {
    for (float d : f.depth) EXPECT_EQ(d, 5.0f);
    for (double t : f.world_to_camera) EXPECT_EQ(t, 0.0);
  }
  for (const auto& s : synth::make_samples(seq, {-1, -2})) {
    for (const auto& t : s.gt_poses)
      for (double v : t) EXPECT_EQ(v, 0.0);
  }
}

TEST(Render, ForwardTranslationShortensDepth) {
  const synth::Sequence seq = synth::render(plane_scene(5.0, {0, 0, 0, 0, 0, 0.5}));
  for (float d : seq.frames[1].depth) EXPECT_NEAR(d, 4.5, 1e-6);
  for (float d : seq.frames[2].depth) EXPECT_NEAR(d, 4.0, 1e-6);
}

TEST(Render, TiltedPlaneMatchesAnalyticIntersection) {
  synth::SceneSpec spec = plane_scene(5.0, {});
  const synth::Vec3 n{0.2, -0.1, -0.974679434480896};
  spec.planes[0].normal = n;
  spec.planes[0].offset = -4.0;
  const synth::Sequence seq = synth::render(spec);
  const Camera cam = seq.camera;
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      const double dx = (x - cam.cx) / cam.fx, dy = (y - cam.cy) / cam.fy;
      const double z = -4.0 / (n[0] * dx + n[1] * dy + n[2]);
      EXPECT_NEAR(seq.frames[0].depth[std::size_t(y) * spec.width + x], z, 1e-6 * z);
    }
}

TEST(Render, DeterministicAndSeedSensitive) {
  const synth::SceneSpec spec = synth::default_scene();
  const synth::Sequence a = synth::render(spec), b = synth::render(spec);
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    EXPECT_EQ(a.frames[i].image, b.frames[i].image);
    EXPECT_EQ(a.frames[i].depth, b.frames[i].depth);
    EXPECT_EQ(a.frames[i].dynamic, b.frames[i].dynamic);
    EXPECT_EQ(a.frames[i].world_to_camera, b.frames[i].world_to_camera);
  }
  synth::SceneSpec other = spec;
  other.seed = spec.seed + 1;
  EXPECT_NE(synth::render(other).frames[0].image, a.frames[0].image);
}

TEST(Render, DefaultSceneDepthsInRangeAndTextured) {
  const synth::SceneSpec spec = synth::default_scene();
  const synth::Sequence seq = synth::render(spec);
  EXPECT_TRUE(seq.warnings.empty());
  for (const auto& f : seq.frames) {
    for (float d : f.depth) {
      ASSERT_GT(d, 0.0f);
      ASSERT_GE(d, spec.d_min);
      ASSERT_LE(d, spec.d_max);
    }
    const auto [lo, hi] = std::minmax_element(f.image.begin(), f.image.end());
    EXPECT_GT(*hi - *lo, 0.3f);
    EXPECT_GT(std::count(f.dynamic.begin(), f.dynamic.end(), 1), 0);
  }
}

TEST(Render, InvisibleQuadWarnsInsteadOfFailing) {
  synth::SceneSpec spec = plane_scene(5.0, {});
  synth::QuadSpec q;
  q.center = {0, 0, -5};
  spec.quads = {q};
  synth::Sequence seq;
  ASSERT_NO_THROW(seq = synth::render(spec));
  ASSERT_EQ(seq.warnings.size(), 1u);
  EXPECT_NE(seq.warnings[0].find("quad 0"), std::string::npos);
}

TEST(Render, GroundTruthDepthAndPoseAreConsistent) {
  const synth::SceneSpec spec = synth::default_scene();
  const synth::Sequence seq = synth::render(spec);
  int checked = 0;
  for (int ref = 3; ref < 6; ++ref)
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        const std::size_t p = std::size_t(y) * spec.width + x;
        if (seq.frames[ref].dynamic[p]) continue;
        const int surface = synth::cast(spec, ref, x, y).surface;
        for (int other : {ref - 1, ref - 3}) {
          const Warp w = warp_pixel(seq, ref, other, x, y);
          if (!inside(seq, w)) continue;
          const synth::Hit hit = synth::cast(spec, other, w.u, w.v);
          if (hit.surface != surface) continue;  // occluded in the other view
          ASSERT_NEAR(hit.depth, w.z, 1e-6) << "pixel " << x << "," << y << " frame " << ref;
          ++checked;
        }
      }
  EXPECT_GT(checked, 10000);
}

TEST(Render, StaticWarpReproducesReferenceWithinTwoGrayLevels) {
  const synth::SceneSpec spec = static_default();
  const synth::Sequence seq = synth::render(spec);
  const int h = spec.height, w = spec.width;
  const std::size_t plane = std::size_t(h) * w;
  double max_err = 0;
  int checked = 0;
  for (int t = 0; t + 1 < spec.frames; ++t) {
    const auto other = as_double(seq.frames[t + 1].image);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int surface = synth::cast(spec, t, x, y).surface;
        const Warp wp = warp_pixel(seq, t, t + 1, x, y);
        if (!inside(seq, wp) || !same_surface(spec, t + 1, wp, surface)) continue;
        const auto s = oracle::sample(other, 3, h, w, wp.u, wp.v);
        for (int c = 0; c < 3; ++c) {
          max_err = std::max(max_err, std::abs(s.values[c] - seq.frames[t].image[c * plane + y * w + x]));
        }
        ++checked;
      }
  }
  EXPECT_GT(checked, 20000);
  EXPECT_LT(max_err * 255.0, 2.0);
}

TEST(Render, DynamicMaskMarksMovingQuadAndBreaksStaticWarp) {
  const synth::SceneSpec spec = synth::default_scene();
  const synth::Sequence seq = synth::render(spec);
  const int h = spec.height, w = spec.width;
  const std::size_t plane = std::size_t(h) * w;
  double dyn_sum = 0, static_sum = 0;
  int dyn_n = 0, static_n = 0;
  for (int t = 0; t + 1 < spec.frames; ++t) {
    const auto other = as_double(seq.frames[t + 1].image);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t p = std::size_t(y) * w + x;
        const synth::Hit hit = synth::cast(spec, t, x, y);
        ASSERT_EQ(seq.frames[t].dynamic[p] != 0, hit.moving);
        const Warp wp = warp_pixel(seq, t, t + 1, x, y);
        if (!inside(seq, wp)) continue;
        const auto s = oracle::sample(other, 3, h, w, wp.u, wp.v);
        double r = 0;
        for (int c = 0; c < 3; ++c) r += std::abs(s.values[c] - seq.frames[t].image[c * plane + p]);
        if (hit.moving) {
          dyn_sum += r;
          ++dyn_n;
        } else {
          static_sum += r;
          ++static_n;
        }
      }
  }
  ASSERT_GT(dyn_n, 100);
  EXPECT_GT(dyn_sum / dyn_n, 2.0 * static_sum / static_n);
}

TEST(Samples, NeighboursPosesAndMasks) {
  const synth::Sequence seq = synth::render(synth::default_scene());
  const auto samples = synth::make_samples(seq, {-1, -2, -3}, 0.5, 20.0);
  ASSERT_EQ(samples.size(), seq.frames.size() - 3);
  for (const auto& s : samples) {
    EXPECT_EQ(s.neighbors, (std::vector<int>{s.reference - 1, s.reference - 2, s.reference - 3}));
    ASSERT_EQ(s.images.size(), 3u);
    ASSERT_EQ(s.gt_poses.size(), 3u);
    EXPECT_EQ(s.gt_depth.values.shape(), (Shape{1, 64, 96}));
    EXPECT_TRUE(s.gt_depth.valid.all());
    const Eigen::Matrix4d expect = oracle::twist_exp(seq.frames[s.neighbors[1]].world_to_camera) *
                                   oracle::twist_exp(seq.frames[s.reference].world_to_camera).inverse();
    EXPECT_LT((oracle::twist_exp(s.gt_poses[1]) - expect).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(s.dynamic.values, seq.frames[s.reference].dynamic);
  }
  EXPECT_THROW(synth::make_samples(seq, {}), std::invalid_argument);
}

TEST(Splits, SizesDisjointUnionAndDeterminism) {
  synth::SceneSpec spec = plane_scene(5.0, {0, 0, 0, 0.05, 0, 0});
  spec.frames = 13;
  const auto samples = synth::make_samples(synth::render(spec), {-1, -2, -3});
  ASSERT_EQ(samples.size(), 10u);
  auto refs = [](const std::vector<synth::Sample>& v) {
    std::vector<int> r;
    for (const auto& s : v) r.push_back(s.reference);
    return r;
  };
  const auto [train, eval] = synth::make_splits(samples, 0.8, 7);
  EXPECT_EQ(train.size(), 8u);
  EXPECT_EQ(eval.size(), 2u);
  std::set<int> all;
  for (int r : refs(train)) all.insert(r);
  for (int r : refs(eval)) {
    EXPECT_EQ(all.count(r), 0u);
    all.insert(r);
  }
  EXPECT_EQ(all, (std::set<int>{3, 4, 5, 6, 7, 8, 9, 10, 11, 12}));
  const auto again = synth::make_splits(samples, 0.8, 7);
  EXPECT_EQ(refs(again.first), refs(train));
  EXPECT_EQ(refs(again.second), refs(eval));
  bool differs = false;
  for (std::uint64_t seed = 8; seed < 16 && !differs; ++seed) {
    differs = refs(synth::make_splits(samples, 0.8, seed).second) != refs(eval);
  }
  EXPECT_TRUE(differs);
  EXPECT_THROW(synth::make_splits({samples[0]}, 0.8, 7), std::invalid_argument);
  EXPECT_THROW(synth::make_splits(samples, 0.05, 7), std::invalid_argument);
  EXPECT_THROW(synth::make_splits(samples, 1.0, 7), std::invalid_argument);
}

TEST(SceneJson, RoundTripAndStrictKeys) {
  const synth::SceneSpec spec = synth::default_scene();
  const synth::SceneSpec back = synth::parse_scene(synth::scene_to_json(spec));
  EXPECT_EQ(synth::scene_to_json(back), synth::scene_to_json(spec));
  EXPECT_EQ(synth::render(back).frames[5].image, synth::render(spec).frames[5].image);

  EXPECT_THROW(synth::parse_scene("{\"heigth\": 64}"), std::invalid_argument);
  EXPECT_THROW(synth::parse_scene("{\"planes\": [{\"normal\": [0,0,-1], \"offset\": -5, \"colour\": [1,1,1]}]}"),
               std::invalid_argument);
  EXPECT_THROW(synth::parse_scene("{\"height\": "), std::invalid_argument);
  EXPECT_THROW(synth::parse_scene("{\"quads\": [{\"center\": [0,0,5], \"axis_u\": [1,0,0], \"axis_v\": [1,0,0]}]}"),
               std::invalid_argument);
  EXPECT_THROW(synth::parse_scene("{\"planes\": [{\"normal\": [0,0,0], \"offset\": -5}]}"), std::invalid_argument);
  EXPECT_THROW(synth::parse_scene("{\"camera_motion\": [0, 0, 0]}"), std::invalid_argument);

  const synth::SceneSpec minimal =
      synth::parse_scene("{\"height\": 16, \"width\": 32, \"planes\": [{\"normal\": [0,0,-1], \"offset\": -3}]}");
  EXPECT_EQ(minimal.height, 16);
  EXPECT_EQ(minimal.resolved_camera().fx, 0.7 * 32);
  EXPECT_TRUE(minimal.quads.empty());
}
