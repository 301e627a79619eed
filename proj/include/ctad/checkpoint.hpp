// SPDX-License-Identifier: Apache-2.0
//
// Named-tensor checkpoint files:
//   "CTAD" | u32 version | u64 count |
//   count x (u32 name_len | name | u8 dtype | u32 rank | u64 dims[rank] | payload) |
//   u64 FNV-1a over every byte of the tensor table
// All integers and payloads are little-endian; dtype 1 = f32, 2 = f64.

#ifndef CTAD_CHECKPOINT_HPP_
#define CTAD_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctad/tensor.hpp"

namespace ctad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StoredTensor {
  Shape shape;
  std::vector<double> values;
  std::uint8_t dtype = 2;
};

using TensorTable = std::map<std::string, StoredTensor>;

std::vector<std::uint8_t> encode_checkpoint(const TensorTable& table);
/// Throws CheckpointError on bad magic, unknown version, truncation or a
/// checksum mismatch.
TensorTable decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const TensorTable& table);
TensorTable load_checkpoint(const std::filesystem::path& path);

}  // namespace ctad

#endif  // CTAD_CHECKPOINT_HPP_
