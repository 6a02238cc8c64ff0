#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "moes/autodiff.hpp"

namespace moes {

struct GradCheckOptions {
  double epsilon = 1e-4;
  double tolerance = 1e-3;
  // Denominator floor for the relative error, so that gradients that are
  // zero up to rounding do not produce spurious failures.
  double magnitude_floor = 1e-7;
  // 0 checks every element; otherwise a seeded random subset of this size.
  std::size_t max_elements_per_parameter = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool flagged = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed() const;
};

// Rebuilds the loss from the graph's current parameter values.
using LossFunction = std::function<Var(Graph&)>;

// Compares analytic parameter gradients of loss_fn against central
// differences (f(x+e) - f(x-e)) / 2e. Parameter values are restored and
// gradients left zeroed on return. epsilon must lie in (0, 1e-2].
GradCheckReport grad_check(Graph& graph, const LossFunction& loss_fn, const GradCheckOptions& options = {});

}  // namespace moes
