#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "advit/graph.hpp"
#include "advit/tensor.hpp"

// Differentiable primitives. Broadcasting is limited to leading dimensions:
// where an operand may be smaller, its shape must equal the trailing
// dimensions of the other operand.
namespace advit::ops {

/// a[..., m, k] x b[k, n] (shared weight) or b[..., k, n] with equal leading dims.
template <typename T>
Var matmul(Graph<T>& g, Var a, Var b);

/// Swaps the last two axes.
template <typename T>
Var transpose_last2(Graph<T>& g, Var a);

/// a + b, where b.shape() equals a.shape() or a trailing suffix of it.
template <typename T>
Var add(Graph<T>& g, Var a, Var b);

/// Elementwise product of equal shapes.
template <typename T>
Var mul(Graph<T>& g, Var a, Var b);

template <typename T>
Var scale(Graph<T>& g, Var a, T factor);

/// Sum of all elements, as a rank-0 tensor.
template <typename T>
Var sum(Graph<T>& g, Var a);

template <typename T>
Var reshape(Graph<T>& g, Var a, Shape shape);

template <typename T>
Var permute(Graph<T>& g, Var a, std::vector<std::size_t> axes);

template <typename T>
Var concat(Graph<T>& g, std::span<const Var> parts, std::size_t axis);

/// Tiles `a` over new leading dimensions: result shape = leading ++ a.shape().
template <typename T>
Var broadcast_leading(Graph<T>& g, Var a, const Shape& leading);

/// Elements [begin, end) along `axis`.
template <typename T>
Var slice(Graph<T>& g, Var a, std::size_t axis, std::size_t begin, std::size_t end);

/// Numerically stable softmax over the last axis.
template <typename T>
Var softmax_lastdim(Graph<T>& g, Var x);

/// Normalizes each last-axis slice to zero mean and unit variance, then
/// applies gamma * (.) + beta. eps must be non-negative.
template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps = T(1e-5));

/// Exact x * Phi(x).
template <typename T>
Var gelu(Graph<T>& g, Var x);

/// Mean over the batch of -sum(labels * log_softmax(logits)). labels[B, C]
/// rows must be probability distributions.
template <typename T>
Var cross_entropy(Graph<T>& g, Var logits, const Tensor<T>& labels);

/// Identity forward; backward multiplies the adjoint by `gate` (0 or 1).
template <typename T>
Var grad_gate(Graph<T>& g, Var x, int gate);

/// Identity forward; no gradient flows back.
template <typename T>
Var detach(Graph<T>& g, Var x);

/// Row-sum tolerance for label distributions at precision T.
template <typename T>
constexpr double label_sum_tolerance() {
  return sizeof(T) >= sizeof(double) ? 1e-9 : 1e-5;
}

/// Validates that every row of labels[B, C] is a probability distribution.
template <typename T>
void check_label_distribution(const Tensor<T>& labels);

}  // namespace advit::ops

namespace advit::testing {

/// Scales the gelu backward pass; 1.0 restores the correct derivative.
/// Exists so verification tooling can prove it detects a broken backward.
void set_gelu_backward_scale(double scale);
double gelu_backward_scale();

}  // namespace advit::testing
