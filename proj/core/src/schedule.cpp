#include "udmt/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

#include "udmt/rng.hpp"

namespace udmt {

std::string task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kSupervised:
      return "supervised";
    case TaskKind::kMass:
      return "mass";
    case TaskKind::kBackTranslation:
      return "bt";
  }
  throw std::logic_error("unknown task kind");
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "supervised") return TaskKind::kSupervised;
  if (name == "mass") return TaskKind::kMass;
  if (name == "bt") return TaskKind::kBackTranslation;
  throw std::invalid_argument(fmt::format("unknown task kind '{}' (expected supervised, mass or bt)", name));
}

std::string parallel_corpus_id(const std::string& domain) { return domain + ".parallel"; }

std::string mono_corpus_id(const std::string& domain, const std::string& language) {
  return domain + ".mono." + language;
}

std::vector<std::string> TrainTaskSpec::corpora() const {
  if (kind == TaskKind::kSupervised) return {parallel_corpus_id(domain)};
  std::vector<std::string> ids;
  for (const auto& l : languages) ids.push_back(mono_corpus_id(domain, l));
  return ids;
}

void StageSpec::validate() const {
  if (budget < 1) throw std::invalid_argument(fmt::format("stage {} ({}): budget must be >= 1", id, name));
  if (tasks.empty()) throw std::invalid_argument(fmt::format("stage {} ({}): no tasks", id, name));
  double total = 0;
  for (const auto& t : tasks) {
    if (!(t.weight >= 0.0) || !std::isfinite(t.weight)) {
      throw std::invalid_argument(fmt::format("stage {} ({}): invalid weight {}", id, name, t.weight));
    }
    if (t.languages.empty()) {
      throw std::invalid_argument(
          fmt::format("stage {} ({}): {} task on {} lists no languages", id, name, task_kind_name(t.kind), t.domain));
    }
    total += t.weight;
  }
  if (!(total > 0.0)) throw std::invalid_argument(fmt::format("stage {} ({}): task weights sum to zero", id, name));
}

std::string config_name(ConfigId id) {
  switch (id) {
    case ConfigId::kBaseline:
      return "Baseline";
    case ConfigId::kS1:
      return "S1";
    case ConfigId::kS2:
      return "S2";
    case ConfigId::kS3:
      return "S3";
    case ConfigId::kS4:
      return "S4";
    case ConfigId::kS5:
      return "S5";
    case ConfigId::kS6:
      return "S6";
  }
  throw std::logic_error("unknown config id");
}

const std::vector<ConfigId>& all_configs() {
  static const std::vector<ConfigId> ids = {ConfigId::kBaseline, ConfigId::kS1, ConfigId::kS2, ConfigId::kS3,
                                            ConfigId::kS4,       ConfigId::kS5, ConfigId::kS6};
  return ids;
}

ConfigId parse_config_id(std::string_view name) {
  for (auto id : all_configs()) {
    if (config_name(id) == name) return id;
  }
  throw std::invalid_argument(fmt::format("unknown configuration '{}' (expected Baseline or S1..S6)", name));
}

namespace {

TrainTaskSpec task(TaskKind kind, const std::string& domain, const std::vector<std::string>& languages,
                   double weight = 1.0) {
  return TrainTaskSpec{kind, domain, languages, weight};
}

StageSpec stage(std::size_t id, std::string name, std::vector<TrainTaskSpec> tasks, std::uint64_t budget) {
  return StageSpec{id, std::move(name), std::move(tasks), budget, id > 1};
}

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : sep) + s;
  return out;
}

void check_corpora(const std::string& owner, const std::vector<StageSpec>& stages, const ExpansionInputs& in) {
  for (const auto& s : stages) {
    s.validate();
    for (const auto& t : s.tasks) {
      for (const auto& c : t.corpora()) {
        if (!in.corpora.count(c)) {
          throw std::invalid_argument(
              fmt::format("{}: stage {} ({}) needs corpus '{}', which the dataset does not provide", owner, s.id,
                          s.name, c));
        }
      }
    }
  }
}

std::vector<TrainTaskSpec> per_domain(TaskKind kind, const std::vector<std::string>& domains,
                                      const std::vector<std::string>& languages, double weight) {
  std::vector<TrainTaskSpec> out;
  for (const auto& d : domains) out.push_back(task(kind, d, languages, weight));
  return out;
}

}  // namespace

StageSpec joint_stage(std::size_t id, const std::vector<std::string>& domains, const ExpansionInputs& in,
                      std::uint64_t budget) {
  std::vector<TrainTaskSpec> tasks = {task(TaskKind::kSupervised, kGeneralDomain, in.languages, in.weights.supervised)};
  for (const auto& d : domains) {
    tasks.push_back(task(TaskKind::kMass, d, in.languages, in.weights.mass));
    tasks.push_back(task(TaskKind::kBackTranslation, d, in.languages, in.weights.bt));
  }
  return stage(id, "joint", std::move(tasks), budget);
}

std::vector<StageSpec> expand_config(ConfigId config, const ExpansionInputs& in) {
  if (in.languages.size() < 2) throw std::invalid_argument("expand_config: need at least two languages");
  const bool needs_domains = config != ConfigId::kBaseline;
  if (needs_domains && in.domains.empty()) {
    throw std::invalid_argument(fmt::format("expand_config: {} needs at least one in-domain corpus", config_name(config)));
  }
  const auto& b = in.budgets;
  const auto& L = in.languages;
  auto mass_general = [&](std::size_t id) {
    return stage(id, "mass-pretrain", {task(TaskKind::kMass, kGeneralDomain, L)}, b.mass_pretrain);
  };
  auto supervised = [&](std::size_t id) {
    return stage(id, "supervised", {task(TaskKind::kSupervised, kGeneralDomain, L)}, b.supervised);
  };
  auto mass_domain = [&](std::size_t id) {
    return stage(id, "mass-pretrain", per_domain(TaskKind::kMass, in.domains, L, 1.0), b.mass_pretrain);
  };

  std::vector<StageSpec> stages;
  switch (config) {
    case ConfigId::kBaseline:
      stages = {mass_general(1), supervised(2)};
      break;
    case ConfigId::kS1:
      stages = {mass_domain(1), supervised(2)};
      break;
    case ConfigId::kS2:
      stages = {mass_domain(1),
                stage(2, "bt-pretrain", per_domain(TaskKind::kBackTranslation, in.domains, L, 1.0), b.bt_pretrain),
                supervised(3)};
      break;
    case ConfigId::kS3:
      stages = {mass_general(1), joint_stage(2, in.domains, in, b.joint)};
      break;
    case ConfigId::kS4:
      stages = {mass_general(1), supervised(2), joint_stage(3, in.domains, in, b.joint)};
      break;
    case ConfigId::kS5:
      stages = {supervised(1), joint_stage(2, in.domains, in, b.joint)};
      break;
    case ConfigId::kS6:
      stages = {joint_stage(1, in.domains, in, b.joint)};
      break;
  }
  check_corpora(config_name(config), stages, in);
  return stages;
}

void AdaptationPlan::validate() const {
  if (steps.empty()) throw std::invalid_argument("adaptation plan has no steps");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].empty()) throw std::invalid_argument(fmt::format("adaptation step {} has no domains", i + 1));
    std::set<std::string> seen;
    for (const auto& d : steps[i]) {
      if (d.empty() || d == kGeneralDomain) {
        throw std::invalid_argument(fmt::format("adaptation step {}: invalid domain '{}'", i + 1, d));
      }
      if (!seen.insert(d).second) {
        throw std::invalid_argument(fmt::format("adaptation step {}: domain '{}' listed twice", i + 1, d));
      }
    }
  }
}

AdaptationPlan parse_adaptation_plan(std::string_view text) {
  AdaptationPlan plan;
  std::vector<std::string> step;
  std::string cur;
  auto flush_domain = [&] {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    step.push_back(b == std::string::npos ? std::string() : cur.substr(b, e - b + 1));
    cur.clear();
  };
  if (text.find_first_not_of(" \t") == std::string_view::npos) throw std::invalid_argument("adaptation plan is empty");
  for (char c : text) {
    if (c == ',') {
      flush_domain();
    } else if (c == '>') {
      flush_domain();
      plan.steps.push_back(std::move(step));
      step.clear();
    } else {
      cur += c;
    }
  }
  flush_domain();
  plan.steps.push_back(std::move(step));
  plan.validate();
  return plan;
}

std::string format_adaptation_plan(const AdaptationPlan& plan) {
  std::vector<std::string> steps;
  for (const auto& s : plan.steps) steps.push_back(join(s, ","));
  return join(steps, ">");
}

std::vector<StageSpec> adaptation_stages(const AdaptationPlan& plan, const ExpansionInputs& in, bool scale_budget) {
  plan.validate();
  const auto& w = in.weights;
  const double single = w.supervised + w.mass + w.bt;
  std::vector<StageSpec> stages;
  for (std::size_t k = 0; k < plan.steps.size(); ++k) {
    const auto& doms = plan.steps[k];
    std::uint64_t budget = in.budgets.joint;
    if (scale_budget && doms.size() > 1) {
      const double total = w.supervised + static_cast<double>(doms.size()) * (w.mass + w.bt);
      budget = static_cast<std::uint64_t>(std::llround(static_cast<double>(budget) * total / single));
    }
    auto s = joint_stage(3 + k, doms, in, budget);
    s.name = "adapt-" + join(doms, "+");
    s.init_from_previous = true;
    stages.push_back(std::move(s));
  }
  check_corpora("adaptation plan " + format_adaptation_plan(plan), stages, in);
  return stages;
}

std::string describe_stages(const std::vector<StageSpec>& stages) {
  std::string out;
  for (const auto& s : stages) {
    out += fmt::format("stage {} {} budget={} init={}\n", s.id, s.name, s.budget,
                       s.init_from_previous ? "previous" : "random");
    for (const auto& t : s.tasks) {
      out += fmt::format("  {} {} [{}] weight={}\n", task_kind_name(t.kind), t.domain, join(t.languages, ","),
                         t.weight);
    }
  }
  return out;
}

TaskSampler::TaskSampler(std::vector<double> weights, std::mt19937_64 rng) : rng_(std::move(rng)) {
  if (weights.empty()) throw std::invalid_argument("task sampler: no tasks");
  double total = 0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument(fmt::format("task sampler: invalid weight {}", w));
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("task sampler: all weights are zero");
  double acc = 0;
  for (double w : weights) {
    probabilities_.push_back(w / total);
    acc += w;
    cumulative_.push_back(acc / total);
  }
}

std::size_t TaskSampler::next() {
  const double u = uniform01(rng_);
  for (std::size_t i = 0; i < cumulative_.size(); ++i) {
    if (u < cumulative_[i] && probabilities_[i] > 0.0) return i;
  }
  // Rounding can leave the last cumulative value just below 1.
  for (std::size_t i = cumulative_.size(); i-- > 0;) {
    if (probabilities_[i] > 0.0) return i;
  }
  throw std::logic_error("task sampler: no positive weight");
}

}  // namespace udmt
