#include "udmt/params.hpp"

#include <fmt/format.h>
#include <stdexcept>

namespace udmt {

std::size_t parameter_count(const ParameterSet& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterSet& params, bool trainable) {
  for (const auto& [name, t] : params) vars_.emplace(name, trainable ? tape.leaf(t) : tape.constant(t));
}

const Var& BoundParameters::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range(fmt::format("unknown parameter '{}'", name));
  return it->second;
}

NamedGradients BoundParameters::named(const GradientMap& grads) const {
  NamedGradients out;
  for (const auto& [name, var] : vars_) {
    auto it = grads.find(var.id());
    if (it == grads.end()) throw std::logic_error(fmt::format("no gradient recorded for parameter '{}'", name));
    out.emplace(name, it->second);
  }
  return out;
}

}  // namespace udmt
