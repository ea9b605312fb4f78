#pragma once

#include <cmath>
#include <cstdint>

#include "advit/graph.hpp"
#include "advit/ops.hpp"
#include "advit/rng.hpp"
#include "advit/tensor.hpp"

namespace advit::test {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) {
    v = static_cast<T>(scale * rng.normal());
  }
  return t;
}

template <typename T = double>
Tensor<T> uniform_tensor(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) {
    v = static_cast<T>(rng.uniform(lo, hi));
  }
  return t;
}

// sum(out * weights): a scalar whose gradient exercises every output entry.
template <typename T>
Var weighted_sum(Graph<T>& g, Var out, const Tensor<T>& weights) {
  return ops::sum(g, ops::mul(g, out, g.constant(weights)));
}

}  // namespace advit::test
