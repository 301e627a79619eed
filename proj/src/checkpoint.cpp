// SPDX-License-Identifier: Apache-2.0

#include "ctad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ctad {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end) : buf_(b), end_(end) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw CheckpointError("checkpoint: truncated");
  }

 private:
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(buf_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<std::uint8_t>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

constexpr std::size_t kHeaderBytes = 4 + 4 + 8;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TensorTable& table) {
  Writer w;
  w.bytes("CTAD", 4);
  w.u32(kCheckpointVersion);
  w.u64(table.size());
  for (const auto& [name, t] : table) {
    if (t.dtype != 1 && t.dtype != 2) throw CheckpointError("checkpoint: unsupported dtype for " + name);
    if (shape_numel(t.shape) != t.values.size()) throw CheckpointError("checkpoint: shape/value mismatch for " + name);
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(t.dtype);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) w.u64(static_cast<std::uint64_t>(d));
    for (double v : t.values) {
      if (t.dtype == 1) {
        w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        w.u64(std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  auto& buf = w.buffer();
  const std::uint64_t sum = fnv1a(buf.data() + kHeaderBytes, buf.size() - kHeaderBytes);
  w.u64(sum);
  return std::move(buf);
}

TensorTable decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderBytes + 8 || std::memcmp(bytes.data(), "CTAD", 4) != 0) {
    throw CheckpointError("checkpoint: bad magic");
  }
  const std::size_t table_end = bytes.size() - 8;
  Reader r(bytes, table_end);
  r.str(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint64_t count = r.u64();
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= std::uint64_t(bytes[table_end + i]) << (8 * i);
  if (stored != fnv1a(bytes.data() + kHeaderBytes, table_end - kHeaderBytes)) {
    throw CheckpointError("checkpoint: checksum mismatch");
  }
  TensorTable table;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    StoredTensor t;
    t.dtype = r.u8();
    if (t.dtype != 1 && t.dtype != 2) throw CheckpointError("checkpoint: unknown dtype in " + name);
    const std::uint32_t rank = r.u32();
    std::uint64_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint64_t d = r.u64();
      if (d == 0 || d > (1u << 30)) throw CheckpointError("checkpoint: bad dimension in " + name);
      t.shape.push_back(static_cast<int>(d));
      numel *= d;
    }
    r.need(static_cast<std::size_t>(numel) * (t.dtype == 1 ? 4 : 8));
    t.values.resize(static_cast<std::size_t>(numel));
    for (auto& v : t.values) v = t.dtype == 1 ? std::bit_cast<float>(r.u32()) : std::bit_cast<double>(r.u64());
    if (!table.emplace(name, std::move(t)).second) throw CheckpointError("checkpoint: duplicate tensor " + name);
  }
  if (r.pos() != table_end) throw CheckpointError("checkpoint: trailing bytes before checksum");
  return table;
}

void save_checkpoint(const std::filesystem::path& path, const TensorTable& table) {
  const auto bytes = encode_checkpoint(table);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

TensorTable load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace ctad
