#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "udmt/model.hpp"
#include "udmt/schedule.hpp"
#include "udmt/tokenizer.hpp"
#include "udmt/training.hpp"

namespace udmt::cli {

/// Everything that determines a run. Stored as JSON; relative paths are
/// resolved against the manifest's directory, and the resolved form is what
/// gets copied into the run directory.
///
///   {
///     "dataset": "data/manifest.json",
///     "tokenizer": {"mode": "atomic"} | {"mode": "bpe", "vocab_size": 800} | {"path": "run/tokenizer"},
///     "model": {"layers": 2, "d_model": 64, "heads": 4, "d_ff": 256, "max_seq_len": 64, "dropout": 0.0},
///     "config": "S4",                      // or "stages": [{"name", "budget", "init", "tasks": [...]}]
///     "domains": ["A"],
///     "plan": "A>B", "base_model": "g/stage2.ckpt",   // adapt only
///     "budgets": {"mass_pretrain": 3000, "bt_pretrain": 3000, "supervised": 5000, "joint": 4000},
///     "weights": {"supervised": 2, "mass": 1, "bt": 1},
///     "training": {"batch_size": 32, "lr": 3e-4, "warmup": 400, "beta1": 0.9, "beta2": 0.98,
///                  "epsilon": 1e-9, "mask_fraction": 0.5, "bt_beam": 1, "eval_every": 500,
///                  "eval_sets": []},
///     "seed": 1,
///     "run_id": "s4",
///     "output": "runs/s4"
///   }
struct ExperimentManifest {
  std::filesystem::path dataset;
  TokenizerMode tokenizer_mode = TokenizerMode::kAtomic;
  std::size_t bpe_vocab_size = 0;
  std::optional<std::filesystem::path> tokenizer_path;
  TransformerConfig model;
  std::optional<ConfigId> config;
  std::vector<StageSpec> stages;
  std::vector<std::string> domains;
  std::optional<AdaptationPlan> plan;
  std::optional<std::filesystem::path> base_model;
  StageBudgets budgets;
  JointWeights weights;
  TrainOptions training;
  std::uint64_t seed = 1;
  std::string run_id;
  std::filesystem::path output;

  /// Canonical JSON text of the resolved manifest.
  std::string to_json() const;
  static ExperimentManifest from_json(const std::string& text, const std::filesystem::path& base_dir);
  static ExperimentManifest load(const std::filesystem::path& path);

  /// Label used in metrics rows: the config name, "adapt:<plan>" for plans
  /// (commas written as "+"), or "custom" for explicit stages.
  std::string config_label() const;
};

/// Thrown for manifest content errors.
class ManifestError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace udmt::cli
