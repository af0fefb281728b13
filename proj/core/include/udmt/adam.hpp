#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "udmt/params.hpp"

namespace udmt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  double base_lr = 3e-4;
  std::uint64_t warmup_steps = 400;
};

/// Learning rate after `step` updates: base_lr * min(1, step / warmup).
double adam_learning_rate(const AdamConfig& config, std::uint64_t step);

struct AdamState {
  AdamState() = default;
  /// Zero moments shaped like every parameter in `params`.
  AdamState(const ParameterSet& params, AdamConfig config);

  AdamConfig config;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update over every parameter. Throws if a
/// parameter has no gradient or no moment slot.
void adam_step(ParameterSet& params, const NamedGradients& grads, AdamState& state);

}  // namespace udmt
