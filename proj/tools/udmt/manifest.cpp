#include "manifest.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace udmt::cli {
namespace {

using ordered_json = nlohmann::ordered_json;

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative()) path = base / path;
  return path.lexically_normal();
}

void check_keys(const ordered_json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ManifestError(fmt::format("manifest: '{}' must be an object", where));
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ManifestError(fmt::format("manifest: unknown key '{}' in {}", key, where));
  }
}

template <typename T>
void read(const ordered_json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

std::string mode_name(TokenizerMode mode) { return mode == TokenizerMode::kBpe ? "bpe" : "atomic"; }

TokenizerMode parse_mode(const std::string& name) {
  if (name == "bpe") return TokenizerMode::kBpe;
  if (name == "atomic") return TokenizerMode::kAtomic;
  throw ManifestError(fmt::format("manifest: unknown tokenizer mode '{}'", name));
}

ordered_json stage_to_json(const StageSpec& stage) {
  ordered_json tasks = ordered_json::array();
  for (const auto& t : stage.tasks) {
    tasks.push_back({{"kind", task_kind_name(t.kind)},
                     {"domain", t.domain},
                     {"languages", t.languages},
                     {"weight", t.weight}});
  }
  return {{"id", stage.id},
          {"name", stage.name},
          {"budget", stage.budget},
          {"init", stage.init_from_previous ? "previous" : "random"},
          {"tasks", tasks}};
}

StageSpec stage_from_json(const ordered_json& j, std::size_t default_id) {
  check_keys(j, "stage", {"id", "name", "budget", "init", "tasks"});
  StageSpec stage;
  stage.id = j.value("id", default_id);
  stage.name = j.value("name", fmt::format("stage{}", stage.id));
  stage.budget = j.at("budget").get<std::uint64_t>();
  const auto init = j.value("init", std::string(default_id == 1 ? "random" : "previous"));
  if (init != "previous" && init != "random") {
    throw ManifestError(fmt::format("manifest: stage init must be 'previous' or 'random', got '{}'", init));
  }
  stage.init_from_previous = init == "previous";
  for (const auto& tj : j.at("tasks")) {
    check_keys(tj, "task", {"kind", "domain", "languages", "weight"});
    TrainTaskSpec task;
    try {
      task.kind = parse_task_kind(tj.at("kind").get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ManifestError(fmt::format("manifest: {}", e.what()));
    }
    task.domain = tj.value("domain", std::string(kGeneralDomain));
    task.languages = tj.at("languages").get<std::vector<std::string>>();
    task.weight = tj.value("weight", 1.0);
    stage.tasks.push_back(std::move(task));
  }
  return stage;
}

}  // namespace

std::string ExperimentManifest::config_label() const {
  if (config) return config_name(*config);
  if (plan) {
    auto text = format_adaptation_plan(*plan);
    std::replace(text.begin(), text.end(), ',', '+');
    return "adapt:" + text;
  }
  return "custom";
}

std::string ExperimentManifest::to_json() const {
  ordered_json j;
  j["dataset"] = dataset.string();
  ordered_json tok;
  if (tokenizer_path) {
    tok["path"] = tokenizer_path->string();
  } else {
    tok["mode"] = mode_name(tokenizer_mode);
    if (tokenizer_mode == TokenizerMode::kBpe) tok["vocab_size"] = bpe_vocab_size;
  }
  j["tokenizer"] = tok;
  j["model"] = {{"layers", model.num_layers},   {"d_model", model.d_model},
                {"heads", model.num_heads},     {"d_ff", model.d_ff},
                {"max_seq_len", model.max_seq_len}, {"dropout", model.dropout_rate}};
  if (config) {
    j["config"] = config_name(*config);
  } else if (!stages.empty()) {
    ordered_json arr = ordered_json::array();
    for (const auto& s : stages) arr.push_back(stage_to_json(s));
    j["stages"] = arr;
  }
  j["domains"] = domains;
  if (plan) j["plan"] = format_adaptation_plan(*plan);
  if (base_model) j["base_model"] = base_model->string();
  j["budgets"] = {{"mass_pretrain", budgets.mass_pretrain},
                  {"bt_pretrain", budgets.bt_pretrain},
                  {"supervised", budgets.supervised},
                  {"joint", budgets.joint}};
  j["weights"] = {{"supervised", weights.supervised}, {"mass", weights.mass}, {"bt", weights.bt}};
  j["training"] = {{"batch_size", training.batch_size},
                   {"lr", training.adam.base_lr},
                   {"warmup", training.adam.warmup_steps},
                   {"beta1", training.adam.beta1},
                   {"beta2", training.adam.beta2},
                   {"epsilon", training.adam.epsilon},
                   {"mask_fraction", training.mask_fraction},
                   {"bt_beam", training.bt_beam},
                   {"eval_every", training.eval_every},
                   {"eval_sets", training.eval_sets}};
  j["seed"] = seed;
  j["run_id"] = run_id;
  j["output"] = output.string();
  return j.dump(2) + "\n";
}

ExperimentManifest ExperimentManifest::from_json(const std::string& text, const std::filesystem::path& base_dir) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(fmt::format("manifest: {}", e.what()));
  }
  check_keys(j, "manifest",
             {"dataset", "tokenizer", "model", "config", "stages", "domains", "plan", "base_model", "budgets",
              "weights", "training", "seed", "run_id", "output"});
  ExperimentManifest m;
  try {
    if (!j.contains("dataset")) throw ManifestError("manifest: 'dataset' is required");
    m.dataset = resolve(base_dir, j.at("dataset").get<std::string>());

    if (j.contains("tokenizer")) {
      const auto& t = j.at("tokenizer");
      check_keys(t, "tokenizer", {"mode", "vocab_size", "path"});
      if (t.contains("path")) m.tokenizer_path = resolve(base_dir, t.at("path").get<std::string>());
      m.tokenizer_mode = parse_mode(t.value("mode", std::string("atomic")));
      read(t, "vocab_size", m.bpe_vocab_size);
      if (!m.tokenizer_path && m.tokenizer_mode == TokenizerMode::kBpe && m.bpe_vocab_size == 0) {
        throw ManifestError("manifest: bpe tokenizer needs 'vocab_size'");
      }
    }

    if (j.contains("model")) {
      const auto& mj = j.at("model");
      check_keys(mj, "model", {"layers", "d_model", "heads", "d_ff", "max_seq_len", "dropout"});
      read(mj, "layers", m.model.num_layers);
      read(mj, "d_model", m.model.d_model);
      read(mj, "heads", m.model.num_heads);
      read(mj, "d_ff", m.model.d_ff);
      read(mj, "max_seq_len", m.model.max_seq_len);
      read(mj, "dropout", m.model.dropout_rate);
    }

    if (j.contains("config") && j.contains("stages")) {
      throw ManifestError("manifest: give either 'config' or 'stages', not both");
    }
    if (j.contains("config")) {
      try {
        m.config = parse_config_id(j.at("config").get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ManifestError(fmt::format("manifest: {}", e.what()));
      }
    }
    if (j.contains("stages")) {
      std::size_t next_id = 1;
      for (const auto& sj : j.at("stages")) {
        m.stages.push_back(stage_from_json(sj, next_id));
        next_id = m.stages.back().id + 1;
      }
      if (m.stages.empty()) throw ManifestError("manifest: 'stages' is empty");
    }
    read(j, "domains", m.domains);

    if (j.contains("plan")) {
      try {
        m.plan = parse_adaptation_plan(j.at("plan").get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ManifestError(fmt::format("manifest: {}", e.what()));
      }
    }
    if (j.contains("base_model")) m.base_model = resolve(base_dir, j.at("base_model").get<std::string>());

    if (j.contains("budgets")) {
      const auto& b = j.at("budgets");
      check_keys(b, "budgets", {"mass_pretrain", "bt_pretrain", "supervised", "joint"});
      read(b, "mass_pretrain", m.budgets.mass_pretrain);
      read(b, "bt_pretrain", m.budgets.bt_pretrain);
      read(b, "supervised", m.budgets.supervised);
      read(b, "joint", m.budgets.joint);
    }
    if (j.contains("weights")) {
      const auto& w = j.at("weights");
      check_keys(w, "weights", {"supervised", "mass", "bt"});
      read(w, "supervised", m.weights.supervised);
      read(w, "mass", m.weights.mass);
      read(w, "bt", m.weights.bt);
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      check_keys(t, "training",
                 {"batch_size", "lr", "warmup", "beta1", "beta2", "epsilon", "mask_fraction", "bt_beam", "eval_every",
                  "eval_sets"});
      read(t, "batch_size", m.training.batch_size);
      read(t, "lr", m.training.adam.base_lr);
      read(t, "warmup", m.training.adam.warmup_steps);
      read(t, "beta1", m.training.adam.beta1);
      read(t, "beta2", m.training.adam.beta2);
      read(t, "epsilon", m.training.adam.epsilon);
      read(t, "mask_fraction", m.training.mask_fraction);
      read(t, "bt_beam", m.training.bt_beam);
      read(t, "eval_every", m.training.eval_every);
      read(t, "eval_sets", m.training.eval_sets);
    }
    read(j, "seed", m.seed);
    read(j, "run_id", m.run_id);
    if (j.contains("output")) m.output = resolve(base_dir, j.at("output").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(fmt::format("manifest: {}", e.what()));
  }
  if (m.training.batch_size == 0) throw ManifestError("manifest: batch_size must be positive");
  if (m.training.eval_every == 0) throw ManifestError("manifest: eval_every must be positive");
  if (m.run_id.empty()) m.run_id = m.config ? config_name(*m.config) : "run";
  return m;
}

ExperimentManifest ExperimentManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open manifest {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  auto base = std::filesystem::absolute(path).parent_path();
  return from_json(ss.str(), base);
}

}  // namespace udmt::cli
