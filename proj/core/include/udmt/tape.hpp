#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "udmt/tensor.hpp"

namespace udmt {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// What a backward rule sees: the gradient flowing into the op's output and
/// accumulation buffers for each input that requires a gradient.
class BackwardContext {
 public:
  std::span<const double> grad_out() const { return grad_out_; }
  bool needs(std::size_t input) const;
  /// Zero-initialized on first use; rules must accumulate with +=.
  std::span<double> grad_in(std::size_t input);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, const std::vector<int>& inputs, std::span<const double> grad_out)
      : tape_(tape), inputs_(inputs), grad_out_(grad_out) {}

  Tape& tape_;
  const std::vector<int>& inputs_;
  std::span<const double> grad_out_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Leaf node id -> accumulated gradient.
using GradientMap = std::map<int, Tensor>;

/// Reverse-mode tape. Operations are appended in execution order, so the op
/// list is topologically sorted by construction; backward replays it in
/// reverse and sums gradients at fan-out.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Tensor value);
  /// Gradient-receiving leaf (a parameter, or an input under grad check).
  Var leaf(Tensor value);

  /// Appends a computed value. The backward rule is kept only if some input
  /// requires a gradient; otherwise the result is a constant.
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  /// Gradients of a scalar root for every leaf. Leaves the root does not
  /// depend on get zero tensors.
  GradientMap backward(const Var& root);

  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_ops() const { return ops_.size(); }

 private:
  friend class BackwardContext;

  struct Node {
    Tensor value;
    bool requires_grad = false;
    bool is_leaf = false;
    std::vector<double> grad;
  };
  struct Op {
    std::vector<int> inputs;
    int output;
    BackwardFn backward;
  };

  std::span<double> grad_buffer(int id);

  std::vector<Node> nodes_;
  std::vector<Op> ops_;
};

}  // namespace udmt
