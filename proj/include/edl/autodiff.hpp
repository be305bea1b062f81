#pragma once

// Reverse-mode automatic differentiation over a linear tape.
//
// Every operation appends one node holding its output value and a closure
// that, given the node's gradient, accumulates into the gradients of its
// inputs. Backward walks the tape in exact reverse order, so inputs always
// precede their consumers. A tape and its values belong to one thread.

#include <cstddef>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "edl/tensor.hpp"

namespace edl {

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, {}, nullptr});
    return {this, nodes_.size() - 1};
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op output. The node requires grad iff any input does; the
  /// backward closure is dropped otherwise.
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    Node node{std::move(value), {}, false, {}, nullptr};
    for (const Var& in : inputs) {
      if (in.tape != this) throw ArgumentError("variable belongs to another tape");
      node.inputs.push_back(in.id);
      node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  const Tensor& grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.empty()) {
      throw ArgumentError("no gradient has been accumulated for node " +
                          std::to_string(id));
    }
    return n.grad;
  }

  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }

  /// Seeds d(root)/d(root) = seed and propagates through the ancestors of
  /// root. Leaf gradients add to whatever is already accumulated; gradients
  /// of intermediate nodes are recomputed from scratch on every pass.
  void backward(Var root, double seed = 1.0) {
    if (root.tape != this) throw ArgumentError("root belongs to another tape");
    if (value(root.id).size() != 1) {
      throw DimensionError("backward root must be a scalar, got " +
                           shape_string(value(root.id).shape()));
    }
    std::vector<bool> reachable(root.id + 1, false);
    reachable[root.id] = true;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      if (!reachable[i]) continue;
      Node& n = nodes_[i];
      if (n.backward) n.grad = Tensor();
      for (std::size_t in : n.inputs) reachable[in] = true;
    }
    grad(root.id)[0] += seed;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (reachable[i] && n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad = Tensor();
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::size_t>& inputs(std::size_t id) const {
    return nodes_.at(id).inputs;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;  // stable addresses across push_back
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline const Tensor& Var::grad() const {
  return static_cast<const Tape*>(tape)->grad(id);
}
inline bool Var::requires_grad() const { return tape->requires_grad(id); }

}  // namespace edl
