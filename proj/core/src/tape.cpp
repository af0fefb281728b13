#include "udmt/tape.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <stdexcept>

namespace udmt {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("Var: unbound handle");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

bool BackwardContext::needs(std::size_t input) const {
  return tape_.requires_grad(inputs_.at(input));
}

std::span<double> BackwardContext::grad_in(std::size_t input) {
  return tape_.grad_buffer(inputs_.at(input));
}

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  nodes_.push_back({std::move(value), false, false, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor value) {
  value.set_requires_grad(true);
  nodes_.push_back({std::move(value), true, true, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  bool any = false;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tape() != this) throw std::logic_error("Tape::record: input belongs to a different tape");
    ids.push_back(in.id());
    any = any || requires_grad(in.id());
  }
  value.set_requires_grad(any);
  nodes_.push_back({std::move(value), any, false, {}});
  int out = static_cast<int>(nodes_.size() - 1);
  if (any) ops_.push_back({std::move(ids), out, std::move(backward)});
  return Var(this, out);
}

std::span<double> Tape::grad_buffer(int id) {
  auto& node = nodes_.at(static_cast<std::size_t>(id));
  if (node.grad.empty()) node.grad.assign(node.value.numel(), 0.0);
  return node.grad;
}

GradientMap Tape::backward(const Var& root) {
  if (root.tape() != this) throw std::invalid_argument("backward: root is not on this tape");
  const auto& rv = value(root.id());
  if (rv.numel() != 1) {
    throw std::invalid_argument(
        fmt::format("backward: root must be a scalar, got shape {}", shape_str(rv.shape())));
  }
  for (auto& n : nodes_) n.grad.clear();

  if (requires_grad(root.id())) {
    grad_buffer(root.id())[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      if (it->output > root.id()) continue;
      auto& out = nodes_[static_cast<std::size_t>(it->output)];
      if (out.grad.empty()) continue;
      BackwardContext ctx(*this, it->inputs, out.grad);
      it->backward(ctx);
    }
  }

  GradientMap grads;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& n = nodes_[i];
    if (!n.is_leaf) continue;
    if (n.grad.empty()) {
      grads.emplace(static_cast<int>(i), Tensor::zeros(n.value.shape()));
    } else {
      grads.emplace(static_cast<int>(i), Tensor(n.value.shape(), n.grad));
    }
  }
  return grads;
}

}  // namespace udmt
