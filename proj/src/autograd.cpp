#include "xvfg/autograd.hpp"

namespace xvfg {

const Tensor& Var::value() const { return tape_->value(id_); }

Tensor Var::grad() const { return tape_->grad(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) { return leaf(std::move(value), false); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad && grad_enabled_;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p) {
  if (frozen_.count(&p)) return constant(p.value);
  Var v = leaf(p.value, true);
  if (grad_enabled_) nodes_.back()->param = &p;
  return v;
}

void Tape::freeze(const std::vector<Parameter*>& params) {
  for (const Parameter* p : params) frozen_.insert(p);
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  bool needs = false;
  if (grad_enabled_) {
    for (int id : inputs) needs = needs || requires_grad(id);
  }
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  node->requires_grad = needs;
  if (needs) {
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::grad(int id) const {
  const Node& node = *nodes_[static_cast<std::size_t>(id)];
  if (node.grad.empty() && !node.value.empty()) return Tensor(node.value.shape());
  return node.grad;
}

Tensor& Tape::grad_slot(int id) {
  Node& node = *nodes_[static_cast<std::size_t>(id)];
  if (node.grad.size() != node.value.size() || node.grad.shape() != node.value.shape()) {
    node.grad = Tensor(node.value.shape());
  }
  return node.grad;
}

void Tape::accumulate(int id, const Tensor& g) {
  if (!requires_grad(id)) return;
  grad_slot(id) += g;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (!loss.shape().is_scalar()) {
    throw ShapeError("backward: loss must be scalar 1x1x1x1, got " + loss.shape().str());
  }
  if (!requires_grad(loss.id())) return;
  grad_slot(loss.id()) = Tensor::scalar(1.0);
  for (int id = loss.id(); id >= 0; --id) {
    Node& node = *nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.param != nullptr) {
      if (node.param->grad.shape() != node.grad.shape()) node.param->grad = Tensor(node.grad.shape());
      node.param->grad += node.grad;
    }
  }
}

Var detach(const Var& v) { return v.tape()->constant(v.value()); }

}  // namespace xvfg
