// SPDX-License-Identifier: Apache-2.0

#include "ctad/params.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace ctad {

std::vector<Scalar> Rng::uniform_values(std::size_t n, double lo, double hi) {
  std::vector<Scalar> v(n);
  for (auto& x : v) x = static_cast<Scalar>(uniform(lo, hi));
  return v;
}

Tensor ParamStore::add(const std::string& name, Shape shape, std::vector<Scalar> values) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor t(std::move(shape), std::move(values), true);
  entries_.emplace(name, t);
  return t;
}

Tensor ParamStore::zeros(const std::string& name, Shape shape) {
  const std::size_t n = shape_numel(shape);
  return add(name, std::move(shape), std::vector<Scalar>(n, Scalar(0)));
}

Tensor ParamStore::uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  return add(name, std::move(shape), rng.uniform_values(n, -bound, bound));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

std::uint64_t ParamStore::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : entries_) {
    mix(name.data(), name.size());
    mix(t.data().data(), t.numel() * sizeof(Scalar));
  }
  return h;
}

double fan_in_bound(int fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

}  // namespace ctad
