#include "advit/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "advit/errors.hpp"
#include "advit/rng.hpp"

namespace advit {

namespace {

double evaluate(const ScalarFn& f) {
  Graph<double> g;
  return g.value(f(g)).item();
}

std::vector<std::size_t> pick_coordinates(std::size_t n, const GradCheckOptions& options) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (options.max_coords == 0 || options.max_coords >= n) {
    return idx;
  }
  Rng rng(options.seed);
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(options.max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradCheckResult grad_check(const ScalarFn& f, Tensor<double>& x, const GradCheckOptions& options) {
  if (!(options.h > 0.0)) {
    throw ContractError("grad_check: h must be positive");
  }
  const bool saved_flag = x.requires_grad();
  const std::vector<double> saved_grad(x.grad().begin(), x.grad().end());
  auto restore = [&] {
    x.set_requires_grad(saved_flag);
    x.clear_grad();
    if (!saved_grad.empty()) {
      x.accumulate_grad(saved_grad);
    }
  };

  x.set_requires_grad(true);
  x.clear_grad();
  double first = 0.0;
  {
    Graph<double> g;
    const Var loss = f(g);
    first = g.value(loss).item();
    g.backward(loss);
  }
  x.ensure_grad();
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());
  if (evaluate(f) != first) {
    restore();
    throw ContractError("grad_check: function is not deterministic (two forward passes disagree)");
  }

  GradCheckResult result;
  for (std::size_t i : pick_coordinates(x.numel(), options)) {
    const double orig = x[i];
    x[i] = orig + options.h;
    const double fp = evaluate(f);
    x[i] = orig - options.h;
    const double fm = evaluate(f);
    x[i] = orig;
    const double numeric = (fp - fm) / (2.0 * options.h);
    const double err = relative_error(analytic[i], numeric);
    if (result.checked == 0 || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.analytic_at_worst = analytic[i];
      result.numeric_at_worst = numeric;
    }
    result.max_abs_analytic = std::max(result.max_abs_analytic, std::abs(analytic[i]));
    result.max_abs_numeric = std::max(result.max_abs_numeric, std::abs(numeric));
    ++result.checked;
  }
  restore();
  return result;
}

}  // namespace advit
