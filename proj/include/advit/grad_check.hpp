#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "advit/graph.hpp"
#include "advit/tensor.hpp"

namespace advit {

struct GradCheckOptions {
  double h = 1e-5;
  /// Coordinates checked per tensor; 0 checks all of them.
  std::size_t max_coords = 0;
  /// Picks the coordinate subset when max_coords is smaller than the tensor.
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  /// Largest |analytic| and |numeric| over the checked coordinates.
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
  std::size_t checked = 0;
};

/// Builds a scalar loss on a fresh graph. The tensor under check must be
/// bound with Graph::leaf; everything else it touches should be constant.
using ScalarFn = std::function<Var(Graph<double>&)>;

/// Compares the reverse-mode gradient of `f` w.r.t. `x` against central
/// differences (f(x+h) - f(x-h)) / 2h. The per-coordinate error is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
///
/// Throws ContractError if two forward passes at the same point disagree.
/// `x` is restored (values, gradient and requires_grad flag) on return.
GradCheckResult grad_check(const ScalarFn& f, Tensor<double>& x, const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric);

}  // namespace advit
