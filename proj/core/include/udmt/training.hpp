#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "udmt/adam.hpp"
#include "udmt/data_synth.hpp"
#include "udmt/eval_report.hpp"
#include "udmt/model.hpp"
#include "udmt/schedule.hpp"
#include "udmt/tokenizer.hpp"

namespace udmt {

using Sentences = std::vector<std::vector<int>>;

/// Tokenized training corpora: parallel data per domain (aligned across
/// languages) and monolingual data per domain and language.
struct TrainingCorpora {
  std::vector<std::string> languages;
  std::map<std::string, std::map<std::string, Sentences>> parallel;
  std::map<std::string, std::map<std::string, Sentences>> mono;

  std::set<std::string> corpus_ids() const;
  std::vector<std::string> in_domains() const;
};

/// Held-out parallel data scored source -> target.
struct TestSet {
  std::string name;
  std::string source_language;
  std::string target_language;
  Sentences source;
  Sentences target;
  /// Target side as whitespace-normalized text, the BLEU references.
  std::vector<std::string> references;
};

struct ExperimentData {
  Tokenizer tokenizer;
  TrainingCorpora corpora;
  /// "general" first, then one per domain.
  std::vector<TestSet> tests;
};

/// Shared source-target tokenizer for a dataset. Atomic vocabularies list
/// every whitespace token of every split (a token inventory, no alignment);
/// BPE merges are learned from the training corpora only.
Tokenizer tokenizer_for_dataset(const DomainDataset& data, TokenizerMode mode, std::size_t bpe_vocab_size = 0);

/// Encodes every split. Test sets go only into `tests`; in-domain parallel
/// data never reaches the training corpora.
ExperimentData prepare_experiment(const DomainDataset& data, Tokenizer tokenizer);

/// Model configuration sized to the tokenizer.
TransformerConfig model_config_for(const Tokenizer& tokenizer, TransformerConfig base);

struct TrainOptions {
  std::size_t batch_size = 32;
  AdamConfig adam;
  double mask_fraction = 0.5;
  std::size_t bt_beam = 1;
  /// Evaluation cadence in steps; every stage is also evaluated at its end.
  std::uint64_t eval_every = 500;
  /// Test sets to score (empty: all).
  std::vector<std::string> eval_sets;
};

/// The inputs of one training step, after assembly and before the update.
struct TaskBatch {
  TaskKind kind = TaskKind::kSupervised;
  std::string domain;
  std::string corpus;
  std::string source_language;
  std::string target_language;
  /// Rows handed to the objective: parallel pairs for supervised, pseudo
  /// pairs for BT (generated source, monolingual target), and the raw
  /// monolingual sentences for MASS (in `targets`, `sources` empty).
  Sentences sources;
  Sentences targets;
  Seq2SeqBatch batch;
};

struct StageLogRow {
  std::string run_id;
  std::size_t stage = 0;
  std::uint64_t step = 0;
  std::uint64_t supervised = 0;
  std::uint64_t mass = 0;
  std::uint64_t bt = 0;
  /// Mean training loss since the previous row.
  double mean_loss = 0.0;
  bool operator==(const StageLogRow&) const = default;
};

inline constexpr const char* kStageLogCsvHeader = "run_id,stage,step,supervised,mass,bt,mean_loss";
std::string stage_log_to_csv(const std::vector<StageLogRow>& rows);
std::vector<StageLogRow> stage_log_from_csv(const std::string& text);

/// Thrown when a loss is not finite.
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(std::size_t stage, std::uint64_t step, double loss);
  std::size_t stage() const { return stage_; }
  std::uint64_t step() const { return step_; }

 private:
  std::size_t stage_;
  std::uint64_t step_;
};

struct RunContext {
  std::string run_id = "run";
  std::string config = "custom";
  /// Root seed; every stage draws from substreams named after its id.
  std::uint64_t seed = 1;
  const ExperimentData* data = nullptr;
  TrainOptions options;
  /// Sees every batch before its update.
  std::function<void(const TaskBatch&)> observer;
};

struct StageResult {
  std::map<TaskKind, std::uint64_t> task_counts;
  std::vector<double> losses;
  MetricsReport metrics;
  std::vector<StageLogRow> log;
};

/// Trains `model` for stage.budget updates with a fresh optimizer state,
/// evaluating every eval_every steps and at the end.
StageResult run_stage(TransformerModel& model, const StageSpec& stage, const RunContext& ctx);

struct RunResult {
  MetricsReport metrics;
  std::vector<StageLogRow> log;
};

/// Runs stages in order, threading parameters. A stage that does not
/// initialize from its predecessor restarts from the seed's initialization.
/// `after_stage` is called after every stage with its index.
RunResult run_stages(TransformerModel& model, const std::vector<StageSpec>& stages, const RunContext& ctx,
                     const std::function<void(const TransformerModel&, const StageSpec&, std::size_t)>& after_stage = {});

/// Fresh model for the context's seed.
TransformerModel initial_model(const TransformerConfig& config, std::uint64_t seed);

/// Greedy translation of a test set scored with corpus BLEU.
double evaluate_test_set(const TransformerModel& model, const Tokenizer& tokenizer, const TestSet& test);

/// Greedy decode length limit for a source with `content_len` tokens.
std::size_t decode_limit(std::size_t content_len, const TransformerConfig& config);

/// Checks that training only ever sees monolingual in-domain text: every
/// supervised pair must come from general parallel data, every MASS
/// sentence and BT target from a monolingual corpus, and no batch row pair
/// may equal an in-domain test pair in either direction.
class UnsupervisedAudit {
 public:
  explicit UnsupervisedAudit(const ExperimentData& data);
  void observe(const TaskBatch& batch);

  std::uint64_t rows_checked() const { return rows_checked_; }
  std::uint64_t violations() const { return violations_; }
  const std::vector<std::string>& messages() const { return messages_; }

 private:
  void flag(std::string message);

  std::set<std::pair<std::vector<int>, std::vector<int>>> forbidden_;
  std::set<std::pair<std::vector<int>, std::vector<int>>> allowed_parallel_;
  std::set<std::vector<int>> mono_;
  std::uint64_t rows_checked_ = 0;
  std::uint64_t violations_ = 0;
  std::vector<std::string> messages_;
};

}  // namespace udmt
