#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "advit/tensor.hpp"

namespace advit {

/// Handle to a node of a Graph.
struct Var {
  std::uint32_t id = 0;
};

/// Tape of executed primitives, replayed in reverse by backward().
///
/// Nodes are appended in execution order, so the tape is topologically
/// sorted by construction. Leaves either own a constant value or are bound to
/// an external Tensor, which must outlive the graph; backward() adds the leaf
/// adjoint into that tensor's gradient when it requires grad.
template <typename T>
class Graph {
 public:
  /// Receives the graph and the finished adjoint of the node being replayed.
  using BackwardFn = std::function<void(Graph&, std::span<const T>)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor<T>& tensor);
  Var constant(Tensor<T> value);

  /// Appends an op node. `backward` is dropped when no input requires grad.
  /// Throws NumericError if `value` is not finite.
  Var record(std::string_view op, Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(std::string_view op, Tensor<T> value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::string_view op_name(Var v) const { return nodes_.at(v.id).op; }

  /// Zero-initialized adjoint storage of `v`, for ops accumulating in place.
  /// Only valid while `v` requires grad.
  std::span<T> adjoint_buffer(Var v);
  void accumulate(Var v, std::span<const T> delta);

  /// Adjoint reached by the last backward() call; empty if none reached.
  std::span<const T> adjoint(Var v) const { return nodes_.at(v.id).adjoint; }

  /// Reverse sweep from a single-element `loss`. Each node is visited once;
  /// bound leaves accumulate additively across calls.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  /// The handle the next recorded node will receive; lets a backward closure
  /// refer to its own output value.
  Var next() const { return Var{static_cast<std::uint32_t>(nodes_.size())}; }

 private:
  struct Node {
    std::string_view op;
    Tensor<T> value;
    std::vector<T> adjoint;
    BackwardFn backward;
    Tensor<T>* bound = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node);

  // deque: references returned by value() stay valid as nodes are appended.
  std::deque<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace advit
