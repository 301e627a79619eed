// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference checks of reverse-mode gradients.

#ifndef CTAD_GRADCHECK_HPP_
#define CTAD_GRADCHECK_HPP_

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "ctad/params.hpp"
#include "ctad/tensor.hpp"

namespace ctad {

struct GradcheckOptions {
  double step = 1e-6;
  /// Coordinates checked per input; 0 checks all of them.
  std::size_t max_coords = 0;
};

/// Compares backward() through f against central differences of
/// sum(f(inputs) * r) for a fixed random projection r. `inputs` must be
/// leaves with requires_grad set. Returns
///   max |analytic - numeric| / max(max |analytic|, max |numeric|, 1e-10).
double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs, Rng& rng,
                 const GradcheckOptions& options = {});

struct GradcheckEntry {
  std::string name;
  int trials = 0;
  double max_rel_error = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error() const;
};

/// Every differentiable operation of the library, `trials` random cases
/// each.
GradcheckReport run_gradcheck_suite(std::uint64_t seed, int trials = 20);

}  // namespace ctad

#endif  // CTAD_GRADCHECK_HPP_
