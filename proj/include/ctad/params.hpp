// SPDX-License-Identifier: Apache-2.0

#ifndef CTAD_PARAMS_HPP_
#define CTAD_PARAMS_HPP_

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ctad/tensor.hpp"

namespace ctad {

/// Seeded generator with platform-independent output (mt19937_64 is fully
/// specified; the mapping to doubles is done here rather than through
/// implementation-defined std distributions).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }
  std::vector<Scalar> uniform_values(std::size_t n, double lo, double hi);

 private:
  std::mt19937_64 engine_;
};

/// Named registry of trainable leaf tensors. Names are unique; iteration is
/// in lexicographic name order, which fixes checkpoint and optimizer order.
class ParamStore {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<Scalar> values);
  Tensor zeros(const std::string& name, Shape shape);
  /// Uniform in [-bound, bound].
  Tensor uniform(const std::string& name, Shape shape, double bound, Rng& rng);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  const std::map<std::string, Tensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  void zero_grad();
  /// FNV-1a over names and raw values.
  std::uint64_t hash() const;

 private:
  std::map<std::string, Tensor> entries_;
};

/// He-uniform bound: samples have standard deviation sqrt(2 / fan_in).
double fan_in_bound(int fan_in);

}  // namespace ctad

#endif  // CTAD_PARAMS_HPP_
