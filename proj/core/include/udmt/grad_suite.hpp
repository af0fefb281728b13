#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "udmt/grad_check.hpp"

namespace udmt {

/// A named scalar program plus the inputs it is differentiated against.
struct GradCase {
  std::string name;
  ScalarProgram program;
  std::vector<std::pair<std::string, Tensor>> inputs;
};

/// One case per differentiable kernel on random tensors with extents <= 8.
/// Each kernel output is contracted with a fixed random weight tensor so
/// that every output element contributes to the scalar.
std::vector<GradCase> kernel_grad_cases(std::uint64_t seed);

/// Full teacher-forced loss of a 1-layer, d_model=8 transformer on a
/// 2-sentence batch, differentiated against every parameter.
GradCase transformer_grad_case(std::uint64_t seed);

/// A deliberately wrong backward rule (gradient scaled by 1.5); any grad
/// check must flag it.
GradCase faulty_grad_case(std::uint64_t seed);

struct GradSuiteResult {
  std::string name;
  double max_rel_error;
  bool passed;
};

std::vector<GradSuiteResult> run_grad_cases(const std::vector<GradCase>& cases, double epsilon, double threshold);

}  // namespace udmt
