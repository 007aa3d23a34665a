#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "xvfg/tensor.hpp"

namespace xvfg {

/// A trainable tensor that outlives individual tapes. Gradients from
/// Tape::backward accumulate into `grad` until zero_grad().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor(value.shape()); }
  std::size_t numel() const { return value.size(); }
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient after backward(); zeros if the node received none.
  Tensor grad() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Backward rule: receives the gradient of the node's output and
/// accumulates into its inputs through Tape::accumulate.
using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

/// Records operations in creation order, which is a topological order, and
/// replays them in reverse for reverse-mode differentiation.
class Tape {
 public:
  /// With grad_enabled false every node is a constant and no backward
  /// rules are kept (evaluation mode).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad);
  /// Leaf bound to a persistent parameter; backward adds into p.grad.
  Var param(Parameter& p);
  /// Parameters bound after this call enter the tape as constants.
  void freeze(const std::vector<Parameter*>& params);

  /// Appends an operation node. requires_grad is inherited from inputs;
  /// the backward rule is dropped when no input needs a gradient.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar loss. Each node is visited once.
  void backward(const Var& loss);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)]->value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)]->requires_grad; }
  Tensor grad(int id) const;

  /// grad(id) += g, allocating the slot on first use. No-op for nodes
  /// that do not require gradients.
  void accumulate(int id, const Tensor& g);
  /// Direct access to a gradient slot (allocated as zeros on first use).
  Tensor& grad_slot(int id);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  bool grad_enabled_;
  std::unordered_set<const Parameter*> frozen_;
  std::vector<std::unique_ptr<Node>> nodes_;
};

/// Copies a value onto the same tape as a constant, cutting gradient flow.
Var detach(const Var& v);

}  // namespace xvfg
