#include "udmt/adam.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

namespace udmt {

double adam_learning_rate(const AdamConfig& config, std::uint64_t step) {
  if (config.warmup_steps == 0) return config.base_lr;
  const double ramp = static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  return config.base_lr * std::min(1.0, ramp);
}

AdamState::AdamState(const ParameterSet& params, AdamConfig cfg) : config(cfg) {
  for (const auto& [name, p] : params) {
    first_moment.emplace(name, Tensor::zeros(p.shape()));
    second_moment.emplace(name, Tensor::zeros(p.shape()));
  }
}

void adam_step(ParameterSet& params, const NamedGradients& grads, AdamState& state) {
  for (const auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) throw std::invalid_argument(fmt::format("adam_step: missing gradient for parameter '{}'", name));
    if (g->second.shape() != p.shape()) {
      throw ShapeError(fmt::format("adam_step: gradient for '{}' has shape {}, parameter has {}", name,
                                   shape_str(g->second.shape()), shape_str(p.shape())));
    }
    if (!state.first_moment.count(name)) {
      throw std::invalid_argument(fmt::format("adam_step: no optimizer state for parameter '{}'", name));
    }
  }

  state.step += 1;
  const auto& c = state.config;
  const double lr = adam_learning_rate(c, state.step);
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  for (auto& [name, p] : params) {
    const auto& g = grads.at(name);
    auto m = state.first_moment.at(name).mutable_data();
    auto v = state.second_moment.at(name).mutable_data();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

}  // namespace udmt
