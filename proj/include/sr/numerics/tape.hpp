// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over a closed set of tensor operations.
// Each recorded node keeps a forward closure (recomputes its value from its
// parents) and a backward closure (accumulates into its parents' grads).

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sr/numerics/tensor.hpp"

namespace sr {

struct Var {
  std::size_t index = 0;
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::size_t node, std::string op)
      : std::runtime_error("non-finite value first produced by node " + std::to_string(node) + " (" +
                           op + ")"),
        node_(node),
        op_(std::move(op)) {}
  std::size_t node() const { return node_; }
  const std::string& op() const { return op_; }

 private:
  std::size_t node_;
  std::string op_;
};

template <class T>
class Tape {
 public:
  using Step = std::function<void(Tape&, std::size_t)>;

  struct Node {
    std::string_view op;
    std::vector<std::size_t> parents;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<Tensor<T>> aux;
    bool requires_grad = false;
    Step forward;
    Step backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor<T> value, bool requires_grad = true) {
    Node node;
    node.op = requires_grad ? "param" : "const";
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends a node and evaluates it once through `forward`.
  Var record(std::string_view op, std::vector<std::size_t> parents, Step forward, Step backward) {
    Node node;
    node.op = op;
    for (std::size_t p : parents) node.requires_grad = node.requires_grad || nodes_.at(p).requires_grad;
    node.parents = std::move(parents);
    node.forward = std::move(forward);
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    const std::size_t id = nodes_.size() - 1;
    nodes_[id].forward(*this, id);
    return Var{id};
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }
  Node& node(std::size_t i) { return nodes_.at(i); }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.index).value; }
  const Tensor<T>& value(std::size_t i) const { return nodes_[i].value; }
  Tensor<T>& mutable_value(std::size_t i) { return nodes_[i].value; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }

  /// Gradient buffer of node i, allocated as zeros on first access.
  Tensor<T>& grad_buffer(std::size_t i) {
    Node& n = nodes_[i];
    if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  /// Gradient of the last backward() root with respect to v; zeros when v
  /// did not influence the root.
  Tensor<T> grad(Var v) {
    Node& n = nodes_.at(v.index);
    if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) return Tensor<T>(n.value.shape());
    return n.grad;
  }

  /// Scalar value of a rank-0 (or single-element) node.
  T scalar(Var v) const {
    const Tensor<T>& t = value(v);
    if (t.size() != 1) throw ShapeError("tape: node is not a scalar, shape " + shape_str(t.shape()));
    return t[0];
  }

  /// Index of the first node (in recording order) holding a non-finite value.
  std::optional<std::size_t> first_non_finite() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (!nodes_[i].value.all_finite()) return i;
    return std::nullopt;
  }

  void backward(Var root) {
    if (value(root).size() != 1) throw ShapeError("tape: backward root must be a scalar");
    for (Node& n : nodes_) n.grad = Tensor<T>();
    grad_buffer(root.index)[0] = T{1};
    for (std::size_t i = root.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
    }
  }

  /// Re-evaluates every recorded node from the leaves and returns the root.
  T replay(Var root) {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].forward) nodes_[i].forward(*this, i);
    return scalar(root);
  }

 private:
  std::vector<Node> nodes_;
};

/// d loss / d params. `loss_fn(tape, param_vars)` must return a scalar Var.
/// Throws NonFiniteError naming the first non-finite intermediate when the
/// loss is not finite.
template <class T, class LossFn>
std::vector<Tensor<T>> grad(LossFn&& loss_fn, std::span<const Tensor<T>> params, T* loss_out = nullptr) {
  Tape<T> tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor<T>& p : params) vars.push_back(tape.leaf(p));
  const Var loss = loss_fn(tape, std::span<const Var>(vars));
  const T value = tape.scalar(loss);
  if (!std::isfinite(value)) {
    const auto bad = tape.first_non_finite();
    const std::size_t at = bad.value_or(loss.index);
    throw NonFiniteError(at, std::string(tape.node(at).op));
  }
  if (loss_out) *loss_out = value;
  tape.backward(loss);
  std::vector<Tensor<T>> grads;
  grads.reserve(vars.size());
  for (Var v : vars) grads.push_back(tape.grad(v));
  return grads;
}

}  // namespace sr
