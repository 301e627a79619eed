// SPDX-License-Identifier: Apache-2.0

#include "ctad/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ctad::io {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::string& buf, std::size_t& pos) {
  for (;;) {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (pos < buf.size() && buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
  return buf.substr(start, pos - start);
}

int parse_dim(const std::string& tok, const fs::path& path) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": bad header value '" + tok + "'");
  }
}

std::string frame_name(const char* prefix, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04d.%s", prefix, index, ext);
  return buf;
}

}  // namespace

void write_ppm(const fs::path& path, const RgbImage& img) {
  if (img.pixels.size() != std::size_t(img.width) * img.height * 3) throw FormatError("ppm: pixel buffer size mismatch");
  auto out = open_out(path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

RgbImage read_ppm(const fs::path& path) {
  const std::string buf = slurp(path);
  std::size_t pos = 0;
  if (header_token(buf, pos) != "P6") throw FormatError(path.string() + ": not a binary PPM");
  RgbImage img;
  img.width = parse_dim(header_token(buf, pos), path);
  img.height = parse_dim(header_token(buf, pos), path);
  if (parse_dim(header_token(buf, pos), path) != 255) throw FormatError(path.string() + ": maxval must be 255");
  ++pos;  // single whitespace before the raster
  const std::size_t n = std::size_t(img.width) * img.height * 3;
  if (buf.size() < pos + n) throw FormatError(path.string() + ": truncated raster");
  img.pixels.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

void write_pfm(const fs::path& path, const FloatMap& map) {
  if (map.values.size() != std::size_t(map.width) * map.height) throw FormatError("pfm: value buffer size mismatch");
  auto out = open_out(path);
  out << "Pf\n" << map.width << ' ' << map.height << "\n-1.0\n";
  std::vector<unsigned char> row(std::size_t(map.width) * 4);
  for (int y = map.height - 1; y >= 0; --y) {
    for (int x = 0; x < map.width; ++x) {
      const auto bits = std::bit_cast<std::uint32_t>(map.values[std::size_t(y) * map.width + x]);
      for (int b = 0; b < 4; ++b) row[std::size_t(x) * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

FloatMap read_pfm(const fs::path& path) {
  const std::string buf = slurp(path);
  std::size_t pos = 0;
  if (header_token(buf, pos) != "Pf") throw FormatError(path.string() + ": not a single-channel PFM");
  FloatMap map;
  map.width = parse_dim(header_token(buf, pos), path);
  map.height = parse_dim(header_token(buf, pos), path);
  const std::string scale_tok = header_token(buf, pos);
  double scale = 0;
  try {
    scale = std::stod(scale_tok);
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": bad scale '" + scale_tok + "'");
  }
  if (scale == 0) throw FormatError(path.string() + ": zero scale");
  const bool little = scale < 0;
  ++pos;
  const std::size_t n = std::size_t(map.width) * map.height;
  if (buf.size() < pos + 4 * n) throw FormatError(path.string() + ": truncated data");
  map.values.resize(n);
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
  for (int y = map.height - 1; y >= 0; --y) {
    for (int x = 0; x < map.width; ++x, p += 4) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t(p[little ? b : 3 - b]) << (8 * b);
      map.values[std::size_t(y) * map.width + x] = std::bit_cast<float>(bits);
    }
  }
  return map;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  auto out = open_out(path);
  out << "# frame wx wy wz tx ty tz fx fy cx cy (world-to-camera twist)\n";
  char buf[64];
  for (const auto& e : entries) {
    out << e.frame;
    for (double v : e.world_to_camera) {
      std::snprintf(buf, sizeof buf, " %.17g", v);
      out << buf;
    }
    for (double v : {e.fx, e.fy, e.cx, e.cy}) {
      std::snprintf(buf, sizeof buf, " %.17g", v);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::istringstream in(slurp(path));
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    ls >> e.frame;
    for (double& v : e.world_to_camera) ls >> v;
    ls >> e.fx >> e.fy >> e.cx >> e.cy;
    std::string extra;
    if (ls.fail() || (ls >> extra)) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 11 values");
    }
    entries.push_back(e);
  }
  return entries;
}

RgbImage to_rgb(const std::vector<float>& chw, int height, int width) {
  const std::size_t plane = std::size_t(height) * width;
  if (chw.size() != 3 * plane) throw FormatError("to_rgb: expected a [3,H,W] buffer");
  RgbImage img{width, height, std::vector<std::uint8_t>(3 * plane)};
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(chw[c * plane + p]), 0.0, 1.0);
      img.pixels[3 * p + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return img;
}

std::vector<float> from_rgb(const RgbImage& img) {
  const std::size_t plane = std::size_t(img.height) * img.width;
  std::vector<float> chw(3 * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) chw[c * plane + p] = static_cast<float>(img.pixels[3 * p + c] / 255.0);
  }
  return chw;
}

void save_sequence(const fs::path& dir, const synth::Sequence& seq) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (const auto& f : seq.frames) {
    entries.push_back({f.index, f.world_to_camera, seq.camera.fx, seq.camera.fy, seq.camera.cx, seq.camera.cy});
    write_ppm(dir / frame_name("frame", f.index, "ppm"), to_rgb(f.image, seq.height, seq.width));
    write_pfm(dir / frame_name("depth", f.index, "pfm"), {seq.width, seq.height, f.depth});
    write_pfm(dir / frame_name("mask", f.index, "pfm"),
              {seq.width, seq.height, std::vector<float>(f.dynamic.begin(), f.dynamic.end())});
  }
  write_manifest(dir / "manifest.txt", entries);
}

synth::Sequence load_sequence(const fs::path& dir) {
  const auto entries = read_manifest(dir / "manifest.txt");
  if (entries.empty()) throw FormatError((dir / "manifest.txt").string() + ": no frames");
  synth::Sequence seq;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.frame != static_cast<int>(i)) throw FormatError("manifest frames must be numbered 0..N-1 in order");
    const RgbImage img = read_ppm(dir / frame_name("frame", e.frame, "ppm"));
    if (i == 0) {
      seq.height = img.height;
      seq.width = img.width;
      seq.camera = Camera{e.fx, e.fy, e.cx, e.cy, img.width, img.height};
      seq.camera.validate();
    } else if (img.height != seq.height || img.width != seq.width) {
      throw FormatError("frame " + std::to_string(e.frame) + " has a different size");
    } else if (e.fx != seq.camera.fx || e.fy != seq.camera.fy || e.cx != seq.camera.cx || e.cy != seq.camera.cy) {
      throw FormatError("frame " + std::to_string(e.frame) + " has different intrinsics");
    }
    synth::Frame f;
    f.index = e.frame;
    f.world_to_camera = e.world_to_camera;
    f.image = from_rgb(img);
    const FloatMap depth = read_pfm(dir / frame_name("depth", e.frame, "pfm"));
    const FloatMap mask = read_pfm(dir / frame_name("mask", e.frame, "pfm"));
    if (depth.width != seq.width || depth.height != seq.height || mask.width != seq.width ||
        mask.height != seq.height) {
      throw FormatError("frame " + std::to_string(e.frame) + ": depth or mask size differs from the image");
    }
    f.depth = depth.values;
    f.dynamic.resize(mask.values.size());
    for (std::size_t p = 0; p < mask.values.size(); ++p) f.dynamic[p] = mask.values[p] > 0.5f ? 1 : 0;
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

RgbImage depth_visualization(const std::vector<float>& depth, int height, int width, double lo, double hi) {
  RgbImage img{width, height, std::vector<std::uint8_t>(std::size_t(height) * width * 3)};
  for (std::size_t p = 0; p < depth.size(); ++p) {
    // Near is bright.
    const double t = std::clamp((hi - depth[p]) / (hi - lo), 0.0, 1.0);
    const auto v = static_cast<std::uint8_t>(std::lround(t * 255.0));
    img.pixels[3 * p] = img.pixels[3 * p + 1] = img.pixels[3 * p + 2] = v;
  }
  return img;
}

}  // namespace ctad::io
