#pragma once

#include <map>
#include <string>
#include <utility>

#include "udmt/tape.hpp"
#include "udmt/tensor.hpp"

namespace udmt {

/// Named trainable parameters, iterated in name order.
using ParameterSet = std::map<std::string, Tensor>;
/// Parameter name -> gradient of the same shape.
using NamedGradients = std::map<std::string, Tensor>;

std::size_t parameter_count(const ParameterSet& params);

/// Parameters registered as leaves on one tape, so the gradients that come
/// back keyed by node id can be renamed.
class BoundParameters {
 public:
  /// With trainable == false the parameters enter the tape as constants and
  /// nothing is recorded for backward.
  BoundParameters(Tape& tape, const ParameterSet& params, bool trainable = true);
  /// Wraps vars already on a tape (e.g. grad-check inputs).
  explicit BoundParameters(std::map<std::string, Var> vars) : vars_(std::move(vars)) {}

  const Var& operator[](const std::string& name) const;
  NamedGradients named(const GradientMap& grads) const;

 private:
  std::map<std::string, Var> vars_;
};

}  // namespace udmt
