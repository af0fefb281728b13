#include "cli.hpp"

#include <fmt/format.h>

#include <CLI11.hpp>
#include <algorithm>
#include <json.hpp>
#include <ostream>
#include <set>

#include "manifest.hpp"
#include "runner.hpp"
#include "udmt/data_synth.hpp"
#include "udmt/eval_report.hpp"
#include "udmt/grad_suite.hpp"
#include "udmt/training.hpp"

namespace udmt::cli {
namespace {

// Marks a failure caused by bad input rather than by the run itself.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GenDataArgs {
  std::filesystem::path output;
  SynthConfig synth;
  SynthSizes sizes;
  bool no_anchor = false;
};

struct TrainArgs {
  std::filesystem::path manifest;
  std::filesystem::path output;
  bool resume = false;
  std::size_t stop_after_stage = 0;
  std::string base_model;
  std::string plan;
  bool plan_given = false;
};

struct EvaluateArgs {
  std::filesystem::path manifest;
  std::filesystem::path checkpoint;
  std::string tokenizer;
  std::vector<std::string> test_sets;
  std::string csv;
  std::string json;
};

struct CompareArgs {
  std::vector<std::filesystem::path> manifests;
  std::filesystem::path base_manifest;
  std::vector<std::string> configs;
  std::filesystem::path output;
  bool reuse = false;
  bool check_ordering = false;
  double slack = 0.5;
  std::string in_domain_test;
};

struct GradCheckArgs {
  double threshold = 1e-4;
  double epsilon = 1e-5;
  std::uint64_t seed = 1;
  bool kernels_only = false;
  bool inject_fault = false;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  auto synth = a.synth;
  synth.anchored = !a.no_anchor;
  DomainDataset data;
  try {
    data = gen_dataset(SynthLang(synth), a.sizes);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::filesystem::create_directories(a.output);
  const auto manifest_path = save_dataset(data, a.output, synth);

  const auto manifest = nlohmann::ordered_json::parse(read_text(manifest_path));
  std::string hashed = read_text(manifest_path);
  out << fmt::format("{:<20} {:>8} {:>9} {:>7}\n", "split", "lines", "tokens", "types");
  for (const auto& split : manifest.at("splits")) {
    const auto file = split.at("path").get<std::string>();
    const auto text = read_text(a.output / file);
    hashed += text;
    std::size_t tokens = 0;
    std::set<std::string> types;
    for (const auto& line : load_corpus(a.output / file, CorpusFormat::kLines).sentences) {
      for (auto& tok : split_tokens(line)) {
        ++tokens;
        types.insert(std::move(tok));
      }
    }
    out << fmt::format("{:<20} {:>8} {:>9} {:>7}\n", file, split.at("lines").get<std::size_t>(), tokens,
                       types.size());
  }
  out << fmt::format("manifest: {}\n", manifest_path.string());
  out << fmt::format("dataset hash: {}\n", fnv1a_hex(hashed));
  return kExitOk;
}

ExperimentManifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw UsageError(fmt::format("manifest {} not found", path.string()));
  return ExperimentManifest::load(path);
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  auto m = load_manifest(a.manifest);
  if (m.plan) throw UsageError("manifest has an adaptation plan; use 'udmt adapt'");
  if (!a.output.empty()) m.output = std::filesystem::absolute(a.output).lexically_normal();
  ExecuteOptions options;
  options.resume = a.resume;
  if (a.stop_after_stage > 0) options.stop_after_stage = a.stop_after_stage;
  const auto outcome = execute_run(m, options, out);
  out << fmt::format("{}: {} stage(s) complete{} -> {}\n", m.run_id, outcome.completed_stages.size(),
                     outcome.finished ? "" : " (stopped early)", m.output.string());
  return kExitOk;
}

int cmd_adapt(const TrainArgs& a, std::ostream& out) {
  auto m = load_manifest(a.manifest);
  if (a.plan_given) {
    try {
      m.plan = parse_adaptation_plan(a.plan);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (!a.base_model.empty()) m.base_model = std::filesystem::absolute(a.base_model).lexically_normal();
  if (!a.output.empty()) m.output = std::filesystem::absolute(a.output).lexically_normal();
  if (!m.plan) throw UsageError("adapt needs an adaptation plan (manifest 'plan' or --plan)");
  if (m.config || !m.stages.empty()) throw UsageError("adapt manifests take a plan, not 'config' or 'stages'");
  if (!m.base_model) throw UsageError("adapt needs a base model (manifest 'base_model' or --base-model)");
  ExecuteOptions options;
  options.resume = a.resume;
  if (a.stop_after_stage > 0) options.stop_after_stage = a.stop_after_stage;
  const auto outcome = execute_run(m, options, out);
  out << fmt::format("{}: {} adaptation step(s) complete{} -> {}\n", m.run_id, outcome.completed_stages.size(),
                     outcome.finished ? "" : " (stopped early)", m.output.string());
  return kExitOk;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  auto m = load_manifest(a.manifest);
  if (!a.tokenizer.empty()) m.tokenizer_path = std::filesystem::absolute(a.tokenizer).lexically_normal();
  const auto prepared = prepare_run(m, false);
  if (!std::filesystem::exists(a.checkpoint)) {
    throw std::runtime_error(fmt::format("checkpoint {} not found", a.checkpoint.string()));
  }
  const auto model = load_model(a.checkpoint.string(), &prepared.model_config);
  MetricsReport report;
  for (const auto& test : prepared.data.tests) {
    if (!a.test_sets.empty() && std::find(a.test_sets.begin(), a.test_sets.end(), test.name) == a.test_sets.end()) {
      continue;
    }
    const double bleu = evaluate_test_set(model, prepared.data.tokenizer, test);
    report.append({m.run_id, m.config_label(), 0, 0, test.name, bleu});
    out << fmt::format("{:<10} {:>7.2f}\n", test.name, bleu);
  }
  for (const auto& name : a.test_sets) {
    const bool found = std::any_of(report.rows().begin(), report.rows().end(),
                                   [&](const MetricsRow& r) { return r.test_set == name; });
    if (!found) throw UsageError(fmt::format("unknown test set '{}'", name));
  }
  std::optional<std::filesystem::path> csv, json;
  if (!a.csv.empty()) csv = a.csv;
  if (!a.json.empty()) json = a.json;
  if (csv || json) emit_report(report, csv, json);
  return kExitOk;
}

struct SummaryRow {
  std::string run_id;
  std::string config;
  std::string in_domain_test;
  double in_domain = 0.0;
  double general = 0.0;
};

int cmd_compare(const CompareArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<ExperimentManifest> manifests;
  for (const auto& path : a.manifests) manifests.push_back(load_manifest(path));
  if (!a.configs.empty()) {
    if (a.base_manifest.empty() || a.output.empty()) {
      throw UsageError("--configs needs --base-manifest and --output");
    }
    const auto base = load_manifest(a.base_manifest);
    for (const auto& name : a.configs) {
      auto m = base;
      try {
        m.config = parse_config_id(name);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      m.stages.clear();
      m.plan.reset();
      m.base_model.reset();
      m.run_id = config_name(*m.config);
      m.output = std::filesystem::absolute(a.output / m.run_id).lexically_normal();
      manifests.push_back(std::move(m));
    }
  }
  if (manifests.empty()) throw UsageError("compare-configs needs --manifest or --configs");
  std::set<std::string> run_ids;
  for (const auto& m : manifests) {
    if (m.dataset != manifests.front().dataset) {
      throw UsageError(fmt::format("mixed datasets: {} vs {}", m.dataset.string(), manifests.front().dataset.string()));
    }
    if (m.seed != manifests.front().seed) {
      throw UsageError(fmt::format("mixed seeds: {} vs {}", m.seed, manifests.front().seed));
    }
    if (!run_ids.insert(m.run_id).second) throw UsageError(fmt::format("duplicate run id '{}'", m.run_id));
  }

  MetricsReport all;
  for (const auto& m : manifests) {
    const bool reusable = a.reuse && run_is_complete(m.output) &&
                          read_text(m.output / "manifest.json") == m.to_json();
    if (reusable) {
      out << fmt::format("{}: reusing {}\n", m.run_id, m.output.string());
      all.extend(load_run_metrics(m.output));
    } else {
      ExecuteOptions options;
      options.resume = a.reuse;
      all.extend(execute_run(m, options, out).metrics);
    }
  }

  std::vector<SummaryRow> rows;
  for (const auto& m : manifests) {
    const auto finals = all.final_scores(m.run_id);
    SummaryRow row{m.run_id, m.config_label(), a.in_domain_test, 0.0, 0.0};
    if (row.in_domain_test.empty()) {
      for (const auto& [set, s] : finals) {
        if (set != kGeneralDomain) {
          row.in_domain_test = set;
          break;
        }
      }
    }
    auto dom = finals.find(row.in_domain_test);
    auto gen = finals.find(kGeneralDomain);
    if (dom == finals.end() || gen == finals.end()) {
      throw std::runtime_error(fmt::format("{}: missing general or in-domain scores", m.run_id));
    }
    row.in_domain = dom->second;
    row.general = gen->second;
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SummaryRow& x, const SummaryRow& y) {
    return x.in_domain != y.in_domain ? x.in_domain > y.in_domain : x.general > y.general;
  });
  out << fmt::format("{:<5} {:<10} {:<12} {}\n", "rank", "config", "run", "in-domain (general)");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << fmt::format("{:<5} {:<10} {:<12} {:.2f} ({:.2f})\n", i + 1, rows[i].config, rows[i].run_id,
                       rows[i].in_domain, rows[i].general);
  }
  if (!a.output.empty()) {
    std::filesystem::create_directories(a.output);
    SummarySpec spec;
    if (!a.in_domain_test.empty()) spec.in_domain_test = a.in_domain_test;
    emit_report(all, a.output / "summary.csv", a.output / "summary.json", spec);
  }

  if (!a.check_ordering) return kExitOk;
  auto find = [&](const std::string& config) -> const SummaryRow* {
    for (const auto& r : rows) {
      if (r.config == config) return &r;
    }
    return nullptr;
  };
  const auto* s4 = find("S4");
  if (!s4) throw UsageError("--check-ordering needs an S4 run");
  bool ok = true;
  for (const char* other : {"S1", "S2", "S6"}) {
    const auto* r = find(other);
    if (!r) continue;
    const bool pass = s4->in_domain + a.slack >= r->in_domain;
    ok = ok && pass;
    out << fmt::format("ordering S4 >= {} (slack {:.2f}): {:.2f} vs {:.2f} {}\n", other, a.slack, s4->in_domain,
                       r->in_domain, pass ? "PASS" : "FAIL");
  }
  if (!ok) err << "error: configuration ordering check failed\n";
  return ok ? kExitOk : kExitFailure;
}

int cmd_grad_check(const GradCheckArgs& a, std::ostream& out, std::ostream& err) {
  auto cases = kernel_grad_cases(a.seed);
  if (!a.kernels_only) cases.push_back(transformer_grad_case(a.seed));
  if (a.inject_fault) cases.push_back(faulty_grad_case(a.seed));
  const auto results = run_grad_cases(cases, a.epsilon, a.threshold);
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << fmt::format("{:<28} max_rel_error={:.3e} {}\n", r.name, r.max_rel_error, r.passed ? "PASS" : "FAIL");
    if (!r.passed) ++failed;
  }
  out << fmt::format("{} of {} cases passed (epsilon {:g}, threshold {:g})\n", results.size() - failed,
                     results.size(), a.epsilon, a.threshold);
  if (failed > 0) err << fmt::format("error: {} gradient check(s) failed\n", failed);
  return failed == 0 ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Domain adaptation experiments for small transformer translation models", "udmt"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset and print its statistics");
  gen_cmd->add_option("--output", gen.output, "Dataset directory")->required();
  gen_cmd->add_option("--seed", gen.synth.seed, "Root seed")->capture_default_str();
  gen_cmd->add_option("--v-general", gen.synth.v_general, "General vocabulary size")->capture_default_str();
  gen_cmd->add_option("--v-domain", gen.synth.v_domain, "Vocabulary size per domain")->capture_default_str();
  gen_cmd->add_option("--num-domains", gen.synth.num_domains, "Number of in-domain domains")->capture_default_str();
  gen_cmd->add_option("--f-new", gen.synth.f_new, "In-domain token rate")->capture_default_str();
  gen_cmd->add_option("--window", gen.synth.window, "Reordering window")->capture_default_str();
  gen_cmd->add_option("--min-len", gen.synth.min_len, "Minimum sentence length")->capture_default_str();
  gen_cmd->add_option("--max-len", gen.synth.max_len, "Maximum sentence length")->capture_default_str();
  gen_cmd->add_option("--zipf", gen.synth.zipf_exponent, "Zipf exponent")->capture_default_str();
  gen_cmd->add_flag("--no-anchor", gen.no_anchor, "Sample in-domain tokens without anchor context");
  gen_cmd->add_option("--general-parallel", gen.sizes.general_parallel, "General parallel pairs")->capture_default_str();
  gen_cmd->add_option("--general-dev", gen.sizes.general_dev, "General dev pairs")->capture_default_str();
  gen_cmd->add_option("--general-mono", gen.sizes.general_mono, "General monolingual sentences per language")
      ->capture_default_str();
  gen_cmd->add_option("--domain-mono", gen.sizes.domain_mono, "In-domain monolingual sentences per language")
      ->capture_default_str();
  gen_cmd->add_option("--test", gen.sizes.test, "Test pairs per domain")->capture_default_str();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run a configuration's stages from a manifest");
  train_cmd->add_option("--manifest", train.manifest, "Experiment manifest")->required();
  train_cmd->add_option("--output", train.output, "Run directory (overrides the manifest)");
  train_cmd->add_flag("--resume", train.resume, "Continue from the last completed stage");
  train_cmd->add_option("--stop-after-stage", train.stop_after_stage, "Stop after the stage with this id");

  TrainArgs adapt;
  auto* adapt_cmd = app.add_subcommand("adapt", "Adapt a general model following an adaptation plan");
  adapt_cmd->add_option("--manifest", adapt.manifest, "Experiment manifest")->required();
  adapt_cmd->add_option("--base-model", adapt.base_model, "General model checkpoint (overrides the manifest)");
  adapt_cmd->add_option("--plan", adapt.plan, "Plan such as A,B or A>B (overrides the manifest)");
  adapt_cmd->add_option("--output", adapt.output, "Run directory (overrides the manifest)");
  adapt_cmd->add_flag("--resume", adapt.resume, "Continue from the last completed step");
  adapt_cmd->add_option("--stop-after-stage", adapt.stop_after_stage, "Stop after the stage with this id");

  EvaluateArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on the manifest's test sets");
  eval_cmd->add_option("--manifest", eval.manifest, "Experiment manifest (dataset, tokenizer, model)")->required();
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--tokenizer", eval.tokenizer, "Tokenizer directory (overrides the manifest)");
  eval_cmd->add_option("--test-set", eval.test_sets, "Test set to score (repeatable; default all)");
  eval_cmd->add_option("--csv", eval.csv, "Metrics CSV output");
  eval_cmd->add_option("--json", eval.json, "Metrics JSON output");

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare-configs", "Run or load several configurations and rank them");
  cmp_cmd->add_option("--manifest", cmp.manifests, "Run manifest (repeatable)");
  cmp_cmd->add_option("--base-manifest", cmp.base_manifest, "Manifest instantiated once per --configs entry");
  cmp_cmd->add_option("--configs", cmp.configs, "Configurations, e.g. Baseline,S1,S4")->delimiter(',');
  cmp_cmd->add_option("--output", cmp.output, "Directory for generated runs and the summary");
  cmp_cmd->add_flag("--reuse", cmp.reuse, "Load finished runs and resume unfinished ones");
  cmp_cmd->add_flag("--check-ordering", cmp.check_ordering, "Require S4 >= S1, S2, S6 on in-domain BLEU");
  cmp_cmd->add_option("--slack", cmp.slack, "Slack for the ordering check in BLEU")->capture_default_str();
  cmp_cmd->add_option("--in-domain-test", cmp.in_domain_test, "In-domain test set (default: first non-general)");

  GradCheckArgs grad;
  auto* grad_cmd = app.add_subcommand("grad-check", "Compare analytic and finite-difference gradients");
  grad_cmd->add_option("--threshold", grad.threshold, "Maximum relative error")->capture_default_str();
  grad_cmd->add_option("--epsilon", grad.epsilon, "Central difference step")->capture_default_str();
  grad_cmd->add_option("--seed", grad.seed, "Seed of the random inputs")->capture_default_str();
  grad_cmd->add_flag("--kernels-only", grad.kernels_only, "Skip the transformer case");
  grad_cmd->add_flag("--inject-fault", grad.inject_fault, "Add a case with a broken backward rule")->group("");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
    if (train_cmd->parsed()) return cmd_train(train, out);
    if (adapt_cmd->parsed()) {
      adapt.plan_given = adapt_cmd->count("--plan") > 0;
      return cmd_adapt(adapt, out);
    }
    if (eval_cmd->parsed()) return cmd_evaluate(eval, out);
    if (cmp_cmd->parsed()) return cmd_compare(cmp, out, err);
    if (grad_cmd->parsed()) return cmd_grad_check(grad, out, err);
  } catch (const TrainingDivergence& e) {
    err << fmt::format("error: training diverged at stage {} step {}: {}\n", e.stage(), e.step(), e.what());
    return kExitFailure;
  } catch (const UsageError& e) {
    err << fmt::format("error: {}\n", e.what());
    return kExitUsage;
  } catch (const ManifestError& e) {
    err << fmt::format("error: {}\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    err << fmt::format("error: {}\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace udmt::cli
