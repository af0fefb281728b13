#include "udmt/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

namespace udmt {

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

namespace {

double evaluate(const ScalarProgram& program, const std::vector<Tensor>& values) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(values.size());
  for (const auto& v : values) vars.push_back(tape.constant(v));
  return program(tape, vars).value().item();
}

}  // namespace

GradCheckReport grad_check(const ScalarProgram& program,
                           const std::vector<std::pair<std::string, Tensor>>& inputs, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) {
    throw std::invalid_argument(fmt::format("grad_check: epsilon {} outside (0, 1e-3]", epsilon));
  }
  Tape tape;
  std::vector<Var> vars;
  for (const auto& [name, t] : inputs) vars.push_back(tape.leaf(t));
  auto root = program(tape, vars);
  auto grads = tape.backward(root);

  std::vector<Tensor> values;
  for (const auto& [name, t] : inputs) values.push_back(t);

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& analytic = grads.at(vars[k].id());
    GradCheckEntry entry{inputs[k].first, 0.0, 0.0};
    for (std::size_t i = 0; i < values[k].numel(); ++i) {
      const double orig = values[k][i];
      values[k].mutable_data()[i] = orig + epsilon;
      const double up = evaluate(program, values);
      values[k].mutable_data()[i] = orig - epsilon;
      const double down = evaluate(program, values);
      values[k].mutable_data()[i] = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(a - numeric) / denom);
      entry.max_abs_analytic = std::max(entry.max_abs_analytic, std::abs(a));
    }
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace udmt
