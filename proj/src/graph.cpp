#include "advit/graph.hpp"

#include <algorithm>
#include <string>

#include "advit/errors.hpp"

namespace advit {

template <typename T>
Var Graph<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::leaf(Tensor<T>& tensor) {
  Node node;
  node.op = "leaf";
  node.value = tensor.detached();
  node.bound = &tensor;
  node.requires_grad = tensor.requires_grad();
  return push(std::move(node));
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  return push(std::move(node));
}

template <typename T>
Var Graph<T>::record(std::string_view op, Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

template <typename T>
Var Graph<T>::record(std::string_view op, Tensor<T> value, std::span<const Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": produced a non-finite value");
  }
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](Var v) { return requires_grad(v); });
  if (node.requires_grad) {
    node.backward = std::move(backward);
  }
  return push(std::move(node));
}

template <typename T>
std::span<T> Graph<T>::adjoint_buffer(Var v) {
  auto& node = nodes_.at(v.id);
  if (node.adjoint.empty()) {
    node.adjoint.assign(node.value.numel(), T{0});
  }
  return node.adjoint;
}

template <typename T>
void Graph<T>::accumulate(Var v, std::span<const T> delta) {
  if (!requires_grad(v)) {
    return;
  }
  auto buf = adjoint_buffer(v);
  if (buf.size() != delta.size()) {
    throw DimensionError("adjoint of size " + std::to_string(delta.size()) + " for node of shape " +
                         shape_str(shape(v)));
  }
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] += delta[i];
  }
}

template <typename T>
void Graph<T>::backward(Var loss) {
  if (value(loss).numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(shape(loss)));
  }
  for (auto& node : nodes_) {
    node.adjoint.clear();
  }
  if (!requires_grad(loss)) {
    return;
  }
  nodes_[loss.id].adjoint.assign(1, T{1});
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.adjoint.empty() || !node.backward) {
      continue;
    }
    node.backward(*this, node.adjoint);
  }
  for (auto& node : nodes_) {
    if (node.bound != nullptr && node.requires_grad && !node.adjoint.empty()) {
      node.bound->accumulate_grad(node.adjoint);
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace advit
