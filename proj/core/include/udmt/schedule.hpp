#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace udmt {

enum class TaskKind { kSupervised, kMass, kBackTranslation };

/// "supervised", "mass", "bt".
std::string task_kind_name(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

inline constexpr const char* kGeneralDomain = "general";

/// Corpus ids: "<domain>.parallel" and "<domain>.mono.<language>".
std::string parallel_corpus_id(const std::string& domain);
std::string mono_corpus_id(const std::string& domain, const std::string& language);

/// One task of a stage. `languages` are cycled round-robin per draw of the task:
/// supervised translates into each listed language in turn, MASS reconstructs
/// each listed language's monolingual corpus, and back-translation takes
/// monolingual text in each listed language, generates the other language and
/// trains the reverse direction.
struct TrainTaskSpec {
  TaskKind kind = TaskKind::kSupervised;
  std::string domain = kGeneralDomain;
  std::vector<std::string> languages;
  double weight = 1.0;

  /// Corpus ids the task reads.
  std::vector<std::string> corpora() const;
  bool operator==(const TrainTaskSpec&) const = default;
};

struct StageSpec {
  /// 1-based position in the pipeline; adaptation steps continue the numbering.
  std::size_t id = 1;
  std::string name;
  std::vector<TrainTaskSpec> tasks;
  std::uint64_t budget = 1;
  bool init_from_previous = true;

  void validate() const;
  bool operator==(const StageSpec&) const = default;
};

enum class ConfigId { kBaseline, kS1, kS2, kS3, kS4, kS5, kS6 };

/// "Baseline", "S1" ... "S6".
std::string config_name(ConfigId id);
ConfigId parse_config_id(std::string_view name);
const std::vector<ConfigId>& all_configs();

struct StageBudgets {
  std::uint64_t mass_pretrain = 3000;
  std::uint64_t bt_pretrain = 3000;
  std::uint64_t supervised = 5000;
  std::uint64_t joint = 4000;
};

/// Sampling weights of a joint stage; MASS and BT weights apply per domain.
struct JointWeights {
  double supervised = 2.0;
  double mass = 1.0;
  double bt = 1.0;
};

struct ExpansionInputs {
  /// Languages of the pair, e.g. {"src", "tgt"}.
  std::vector<std::string> languages;
  /// In-domain domains adapted to by the configuration.
  std::vector<std::string> domains;
  /// Corpus ids available; every task's corpora must be present.
  std::set<std::string> corpora;
  StageBudgets budgets;
  JointWeights weights;
};

/// Stage list of a configuration:
///   Baseline: MASS(general mono) -> supervised(general parallel)
///   S1: MASS(in-domain mono) -> supervised
///   S2: MASS(in-domain mono) -> BT(in-domain mono) -> supervised
///   S3: MASS(general mono) -> joint
///   S4: MASS(general mono) -> supervised -> joint
///   S5: supervised -> joint
///   S6: joint, from random initialization
/// where joint = supervised(general parallel) + MASS + BT on every in-domain corpus.
std::vector<StageSpec> expand_config(ConfigId config, const ExpansionInputs& inputs);

/// Ordered adaptation steps; each step adapts jointly to a set of domains.
struct AdaptationPlan {
  std::vector<std::vector<std::string>> steps;
  void validate() const;
};

/// "A,B" -> [{A,B}], "A>B" -> [{A},{B}], "A,B>C" -> [{A,B},{C}].
AdaptationPlan parse_adaptation_plan(std::string_view text);
std::string format_adaptation_plan(const AdaptationPlan& plan);

/// Joint stages of a plan applied to a general model G (the first two S4
/// stages), numbered from 3 so that plan [{A}] reproduces S4 exactly. A step
/// over k domains gets its budget scaled by its total task weight relative to
/// a single-domain step, so each domain sees as many MASS and BT draws as in
/// single-domain adaptation (disabled by scale_budget = false).
std::vector<StageSpec> adaptation_stages(const AdaptationPlan& plan, const ExpansionInputs& inputs,
                                         bool scale_budget = true);

/// Joint stage over `domains` (supervised on general parallel data first,
/// then MASS and BT per domain).
StageSpec joint_stage(std::size_t id, const std::vector<std::string>& domains, const ExpansionInputs& inputs,
                      std::uint64_t budget);

/// One line per stage and task, stable across versions; used for golden tests and logs.
std::string describe_stages(const std::vector<StageSpec>& stages);

/// I.i.d. categorical draws proportional to the weights.
class TaskSampler {
 public:
  TaskSampler(std::vector<double> weights, std::mt19937_64 rng);
  std::size_t next();
  const std::vector<double>& probabilities() const { return probabilities_; }

 private:
  std::vector<double> probabilities_;
  std::vector<double> cumulative_;
  std::mt19937_64 rng_;
};

}  // namespace udmt
