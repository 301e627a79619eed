// SPDX-License-Identifier: Apache-2.0
//
// Binary PPM images, PFM float maps, the per-frame pose manifest, and
// whole-sequence directories built from them.

#ifndef CTAD_IO_HPP_
#define CTAD_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctad/geometry.hpp"
#include "ctad/synth.hpp"

namespace ctad::io {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit RGB.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 per pixel
};

void write_ppm(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_ppm(const std::filesystem::path& path);

/// Single-channel float map, rows stored top-to-bottom in memory.
struct FloatMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;
};

/// "Pf" header, negative scale (little-endian), rows written bottom-to-top.
void write_pfm(const std::filesystem::path& path, const FloatMap& map);
FloatMap read_pfm(const std::filesystem::path& path);

struct ManifestEntry {
  int frame = 0;
  se3::Twist world_to_camera{};
  double fx = 0, fy = 0, cx = 0, cy = 0;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// [3,H,W] values in [0,1] to 8-bit with rounding.
RgbImage to_rgb(const std::vector<float>& chw, int height, int width);
std::vector<float> from_rgb(const RgbImage& img);

/// Writes manifest.txt, frame_NNNN.ppm, depth_NNNN.pfm and mask_NNNN.pfm.
void save_sequence(const std::filesystem::path& dir, const synth::Sequence& seq);
/// Inverse of save_sequence (radiance is left empty).
synth::Sequence load_sequence(const std::filesystem::path& dir);

/// Grayscale-ramp visualization of a depth map scaled to [lo, hi].
RgbImage depth_visualization(const std::vector<float>& depth, int height, int width, double lo, double hi);

}  // namespace ctad::io

#endif  // CTAD_IO_HPP_
