#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "udmt/tape.hpp"

namespace udmt {

/// Builds a scalar from the given inputs on a fresh tape. Must be deterministic.
using ScalarProgram = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double worst() const;
  bool passed(double threshold) const { return worst() < threshold; }
};

/// Compares tape gradients with central differences. Per element the error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8), max-reduced per input.
GradCheckReport grad_check(const ScalarProgram& program,
                           const std::vector<std::pair<std::string, Tensor>>& inputs, double epsilon = 1e-5);

}  // namespace udmt
