#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "manifest.hpp"
#include "udmt/eval_report.hpp"
#include "udmt/training.hpp"

namespace udmt::cli {

inline constexpr const char* kToolVersion = "udmt 0.1.0";

/// Dataset, tokenizer and model configuration a manifest resolves to.
struct PreparedRun {
  ExperimentData data;
  TransformerConfig model_config;
  std::vector<StageSpec> stages;
};

/// Loads the dataset, builds or loads the tokenizer and expands the stages
/// (config, explicit stages or adaptation plan) unless with_stages is false.
PreparedRun prepare_run(const ExperimentManifest& manifest, bool with_stages = true);

struct ExecuteOptions {
  /// Continue a run directory from its last completed stage.
  bool resume = false;
  /// Stop once the stage with this id has completed.
  std::optional<std::size_t> stop_after_stage;
};

struct RunOutcome {
  MetricsReport metrics;
  std::vector<StageLogRow> log;
  std::vector<std::size_t> completed_stages;
  bool finished = false;
};

/// Trains every stage of the manifest into manifest.output:
///   manifest.json  resolved manifest       run.json     tool version, seed, run id
///   tokenizer/     vocabulary and merges   stages.txt   stage list
///   stage<id>.ckpt parameters per stage    metrics.csv/.json, stages.csv, progress.json
/// Adaptation runs (manifest with a plan) start from base_model and record its
/// scores as adapt_step 0. Throws TrainingDivergence on a non-finite loss.
RunOutcome execute_run(const ExperimentManifest& manifest, const ExecuteOptions& options, std::ostream& log);

/// Metrics of a finished run directory.
MetricsReport load_run_metrics(const std::filesystem::path& run_dir);

/// True if the run directory records every stage as completed.
bool run_is_complete(const std::filesystem::path& run_dir);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// 64-bit FNV-1a, printed as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace udmt::cli
