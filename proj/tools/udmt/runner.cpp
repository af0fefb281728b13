#include "runner.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <map>
#include <ostream>
#include <sstream>

namespace udmt::cli {
namespace {

using ordered_json = nlohmann::ordered_json;

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t stage_id) {
  return dir / fmt::format("stage{}.ckpt", stage_id);
}

std::vector<std::size_t> read_progress(const std::filesystem::path& dir) {
  const auto path = dir / "progress.json";
  if (!std::filesystem::exists(path)) return {};
  return ordered_json::parse(read_text(path)).at("completed").get<std::vector<std::size_t>>();
}

void write_outputs(const std::filesystem::path& dir, const RunOutcome& outcome, std::size_t total_stages) {
  emit_report(outcome.metrics, dir / "metrics.csv", dir / "metrics.json");
  write_text(dir / "stages.csv", stage_log_to_csv(outcome.log));
  ordered_json progress = {{"completed", outcome.completed_stages}, {"total", total_stages}};
  write_text(dir / "progress.json", progress.dump(2) + "\n");
}

std::string format_scores(const MetricsReport& report, std::size_t adapt_step, const std::string& run_id) {
  std::map<std::string, double> last;
  for (const auto& row : report.rows()) {
    if (row.run_id == run_id && row.adapt_step == adapt_step) last[row.test_set] = row.bleu;
  }
  std::string out;
  for (const auto& [name, bleu] : last) out += fmt::format(" {}={:.2f}", name, bleu);
  return out;
}

}  // namespace

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error(fmt::format("failed writing {}", path.string()));
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

PreparedRun prepare_run(const ExperimentManifest& manifest, bool with_stages) {
  auto dataset = load_dataset(manifest.dataset);
  auto tokenizer = manifest.tokenizer_path
                       ? Tokenizer::load(*manifest.tokenizer_path)
                       : tokenizer_for_dataset(dataset, manifest.tokenizer_mode, manifest.bpe_vocab_size);
  PreparedRun run{prepare_experiment(dataset, std::move(tokenizer)), {}, {}};
  run.model_config = model_config_for(run.data.tokenizer, manifest.model);
  run.model_config.validate();

  for (const auto& name : manifest.training.eval_sets) {
    const bool known = std::any_of(run.data.tests.begin(), run.data.tests.end(),
                                   [&](const TestSet& t) { return t.name == name; });
    if (!known) throw ManifestError(fmt::format("manifest: unknown test set '{}'", name));
  }

  ExpansionInputs inputs;
  inputs.languages = run.data.corpora.languages;
  inputs.domains = manifest.domains.empty() ? run.data.corpora.in_domains() : manifest.domains;
  inputs.corpora = run.data.corpora.corpus_ids();
  inputs.budgets = manifest.budgets;
  inputs.weights = manifest.weights;

  if (!with_stages) return run;
  const int sources = (manifest.config ? 1 : 0) + (manifest.stages.empty() ? 0 : 1) + (manifest.plan ? 1 : 0);
  if (sources != 1) throw ManifestError("manifest: give exactly one of 'config', 'stages' or 'plan'");
  if (manifest.config) {
    run.stages = expand_config(*manifest.config, inputs);
  } else if (manifest.plan) {
    run.stages = adaptation_stages(*manifest.plan, inputs);
  } else {
    run.stages = manifest.stages;
    for (const auto& s : run.stages) {
      s.validate();
      for (const auto& t : s.tasks) {
        for (const auto& c : t.corpora()) {
          if (!inputs.corpora.count(c)) {
            throw ManifestError(fmt::format("manifest: stage {} ({}) needs corpus '{}'", s.id, s.name, c));
          }
        }
      }
    }
  }
  return run;
}

RunOutcome execute_run(const ExperimentManifest& manifest, const ExecuteOptions& options, std::ostream& log) {
  if (manifest.output.empty()) throw ManifestError("manifest: 'output' is required");
  const bool adapting = manifest.plan.has_value();
  if (adapting && !manifest.base_model) throw ManifestError("manifest: adaptation needs 'base_model'");
  if (adapting && !std::filesystem::exists(*manifest.base_model)) {
    throw std::runtime_error(fmt::format("base model {} not found", manifest.base_model->string()));
  }

  auto prepared = prepare_run(manifest);
  const auto& dir = manifest.output;
  const auto manifest_text = manifest.to_json();
  const bool existing = std::filesystem::exists(dir / "manifest.json");

  RunOutcome outcome;
  if (existing) {
    if (!options.resume) {
      throw std::runtime_error(fmt::format("{} already holds a run; pass --resume to continue it", dir.string()));
    }
    if (read_text(dir / "manifest.json") != manifest_text) {
      throw std::runtime_error(fmt::format("{}: stored manifest differs from the one given", dir.string()));
    }
    outcome.completed_stages = read_progress(dir);
    if (std::filesystem::exists(dir / "metrics.csv")) outcome.metrics = metrics_from_csv(read_text(dir / "metrics.csv"));
    if (std::filesystem::exists(dir / "stages.csv")) outcome.log = stage_log_from_csv(read_text(dir / "stages.csv"));
  } else {
    std::filesystem::create_directories(dir);
    write_text(dir / "manifest.json", manifest_text);
    ordered_json run_info = {{"tool", kToolVersion},
                             {"run_id", manifest.run_id},
                             {"config", manifest.config_label()},
                             {"seed", manifest.seed},
                             {"manifest_hash", fnv1a_hex(manifest_text)}};
    write_text(dir / "run.json", run_info.dump(2) + "\n");
    prepared.data.tokenizer.save(dir / "tokenizer");
    write_text(dir / "stages.txt", describe_stages(prepared.stages));
  }

  RunContext ctx;
  ctx.run_id = manifest.run_id;
  ctx.config = manifest.config_label();
  ctx.seed = manifest.seed;
  ctx.data = &prepared.data;
  ctx.options = manifest.training;

  std::optional<TransformerModel> model;
  if (!outcome.completed_stages.empty()) {
    model.emplace(load_model(checkpoint_path(dir, outcome.completed_stages.back()).string(), &prepared.model_config));
    log << fmt::format("resuming {} after stage {}\n", manifest.run_id, outcome.completed_stages.back());
  } else if (adapting) {
    model.emplace(load_model(manifest.base_model->string(), &prepared.model_config));
    outcome.metrics = MetricsReport{};
    for (const auto& test : prepared.data.tests) {
      const auto& sets = manifest.training.eval_sets;
      if (!sets.empty() && std::find(sets.begin(), sets.end(), test.name) == sets.end()) continue;
      outcome.metrics.append(
          {manifest.run_id, ctx.config, 0, 0, test.name, evaluate_test_set(*model, prepared.data.tokenizer, test)});
    }
    log << fmt::format("base model:{}\n", format_scores(outcome.metrics, 0, manifest.run_id));
    write_outputs(dir, outcome, prepared.stages.size());
  } else {
    model.emplace(initial_model(prepared.model_config, manifest.seed));
  }

  for (const auto& stage : prepared.stages) {
    const auto& done = outcome.completed_stages;
    if (std::find(done.begin(), done.end(), stage.id) != done.end()) continue;
    if (!stage.init_from_previous) *model = initial_model(prepared.model_config, manifest.seed);
    auto result = run_stage(*model, stage, ctx);
    outcome.metrics.extend(result.metrics);
    outcome.log.insert(outcome.log.end(), result.log.begin(), result.log.end());
    outcome.completed_stages.push_back(stage.id);
    save_model(*model, checkpoint_path(dir, stage.id).string(),
               {{"run_id", manifest.run_id}, {"stage", std::to_string(stage.id)}, {"stage_name", stage.name}});
    write_outputs(dir, outcome, prepared.stages.size());
    log << fmt::format("stage {} {} done ({} steps):{}\n", stage.id, stage.name, stage.budget,
                       format_scores(outcome.metrics, stage.id, manifest.run_id));
    if (options.stop_after_stage && *options.stop_after_stage == stage.id) break;
  }
  outcome.finished = outcome.completed_stages.size() == prepared.stages.size();
  return outcome;
}

MetricsReport load_run_metrics(const std::filesystem::path& run_dir) {
  return metrics_from_csv(read_text(run_dir / "metrics.csv"));
}

bool run_is_complete(const std::filesystem::path& run_dir) {
  const auto path = run_dir / "progress.json";
  if (!std::filesystem::exists(path)) return false;
  const auto j = ordered_json::parse(read_text(path));
  return j.at("completed").size() == j.at("total").get<std::size_t>();
}

}  // namespace udmt::cli
