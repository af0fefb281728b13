#include "udmt/training.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <sstream>

#include "udmt/decode.hpp"
#include "udmt/objectives.hpp"
#include "udmt/rng.hpp"

namespace udmt {

std::set<std::string> TrainingCorpora::corpus_ids() const {
  std::set<std::string> ids;
  for (const auto& [domain, sides] : parallel) {
    bool complete = true;
    for (const auto& l : languages) complete = complete && sides.count(l) && !sides.at(l).empty();
    if (complete) ids.insert(parallel_corpus_id(domain));
  }
  for (const auto& [domain, by_lang] : mono) {
    for (const auto& [lang, sents] : by_lang) {
      if (!sents.empty()) ids.insert(mono_corpus_id(domain, lang));
    }
  }
  return ids;
}

std::vector<std::string> TrainingCorpora::in_domains() const {
  std::vector<std::string> out;
  for (const auto& [domain, by_lang] : mono) {
    if (domain != kGeneralDomain) out.push_back(domain);
  }
  return out;
}

namespace {

Sentences encode_all(const Tokenizer& tok, const std::vector<std::string>& lines, const std::string& what) {
  Sentences out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out.push_back(tok.encode(lines[i]));
    } catch (const std::exception& e) {
      throw std::invalid_argument(fmt::format("{} line {}: {}", what, i + 1, e.what()));
    }
  }
  return out;
}

TestSet make_test(const Tokenizer& tok, const std::string& name, const ParallelSet& set,
                  const std::vector<std::string>& languages) {
  TestSet t;
  t.name = name;
  t.source_language = languages.at(0);
  t.target_language = languages.at(1);
  t.source = encode_all(tok, set.source, name + " test source");
  t.target = encode_all(tok, set.target, name + " test target");
  for (const auto& r : set.target) t.references.push_back(join_tokens(split_tokens(r)));
  return t;
}

}  // namespace

Tokenizer tokenizer_for_dataset(const DomainDataset& data, TokenizerMode mode, std::size_t bpe_vocab_size) {
  std::vector<std::string> text;
  auto add = [&](const std::vector<std::string>& v) { text.insert(text.end(), v.begin(), v.end()); };
  add(data.general_train.source);
  add(data.general_train.target);
  add(data.general_mono_source);
  add(data.general_mono_target);
  for (const auto& [name, d] : data.domains) {
    add(d.mono_source);
    add(d.mono_target);
  }
  if (mode == TokenizerMode::kBpe) return Tokenizer::train_bpe(text, bpe_vocab_size, data.languages);
  add(data.general_dev.source);
  add(data.general_dev.target);
  add(data.general_test.source);
  add(data.general_test.target);
  for (const auto& [name, d] : data.domains) {
    add(d.test.source);
    add(d.test.target);
  }
  return Tokenizer::build_atomic(text, data.languages);
}

ExperimentData prepare_experiment(const DomainDataset& data, Tokenizer tokenizer) {
  if (data.languages.size() != 2) throw std::invalid_argument("prepare_experiment: expected a language pair");
  for (const auto& l : data.languages) tokenizer.language_tag(l);
  ExperimentData out{std::move(tokenizer), {}, {}};
  const auto& tok = out.tokenizer;
  const auto& L = data.languages;
  auto& c = out.corpora;
  c.languages = L;
  c.parallel[kGeneralDomain][L[0]] = encode_all(tok, data.general_train.source, "general parallel source");
  c.parallel[kGeneralDomain][L[1]] = encode_all(tok, data.general_train.target, "general parallel target");
  c.mono[kGeneralDomain][L[0]] = encode_all(tok, data.general_mono_source, "general mono source");
  c.mono[kGeneralDomain][L[1]] = encode_all(tok, data.general_mono_target, "general mono target");
  out.tests.push_back(make_test(tok, kGeneralDomain, data.general_test, L));
  for (const auto& [name, d] : data.domains) {
    c.mono[name][L[0]] = encode_all(tok, d.mono_source, name + " mono source");
    c.mono[name][L[1]] = encode_all(tok, d.mono_target, name + " mono target");
    out.tests.push_back(make_test(tok, name, d.test, L));
  }
  return out;
}

TransformerConfig model_config_for(const Tokenizer& tokenizer, TransformerConfig base) {
  base.vocab_size = tokenizer.vocab_size();
  base.num_special_tokens = tokenizer.num_special_tokens();
  base.validate();
  return base;
}

std::string stage_log_to_csv(const std::vector<StageLogRow>& rows) {
  std::string out = std::string(kStageLogCsvHeader) + "\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{:.17g}\n", r.run_id, r.stage, r.step, r.supervised, r.mass, r.bt,
                       r.mean_loss);
  }
  return out;
}

std::vector<StageLogRow> stage_log_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kStageLogCsvHeader) throw std::invalid_argument("stage log csv: bad header");
  std::vector<StageLogRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw std::invalid_argument(fmt::format("stage log csv line {}: expected 7 fields", line_no));
    try {
      rows.push_back({f[0], std::stoul(f[1]), std::stoull(f[2]), std::stoull(f[3]), std::stoull(f[4]),
                      std::stoull(f[5]), std::stod(f[6])});
    } catch (const std::logic_error& e) {
      throw std::invalid_argument(fmt::format("stage log csv line {}: {}", line_no, e.what()));
    }
  }
  return rows;
}

TrainingDivergence::TrainingDivergence(std::size_t stage, std::uint64_t step, double loss)
    : std::runtime_error(fmt::format("training diverged at stage {} step {} (loss {})", stage, step, loss)),
      stage_(stage),
      step_(step) {}

TransformerModel initial_model(const TransformerConfig& config, std::uint64_t seed) {
  return TransformerModel(config, derive_seed(seed, "init"));
}

std::size_t decode_limit(std::size_t content_len, const TransformerConfig& config) {
  return std::min(2 * content_len + 4, config.max_seq_len);
}

double evaluate_test_set(const TransformerModel& model, const Tokenizer& tokenizer, const TestSet& test) {
  const int tag = tokenizer.language_tag(test.target_language);
  std::vector<std::string> hyps;
  constexpr std::size_t kChunk = 100;
  for (std::size_t begin = 0; begin < test.source.size(); begin += kChunk) {
    const auto end = std::min(test.source.size(), begin + kChunk);
    Sentences srcs;
    std::vector<std::size_t> limits;
    for (std::size_t i = begin; i < end; ++i) {
      std::vector<int> s = {tag};
      s.insert(s.end(), test.source[i].begin(), test.source[i].end());
      srcs.push_back(std::move(s));
      limits.push_back(decode_limit(test.source[i].size() - 1, model.config()));
    }
    for (const auto& out : greedy_decode_batch(model, srcs, limits)) hyps.push_back(tokenizer.decode(out));
  }
  return corpus_bleu(hyps, test.references);
}

namespace {

const std::string& other_language(const std::vector<std::string>& languages, const std::string& lang) {
  auto it = std::find(languages.begin(), languages.end(), lang);
  if (it == languages.end()) throw std::invalid_argument(fmt::format("unknown language '{}'", lang));
  const auto i = static_cast<std::size_t>(it - languages.begin());
  return languages[(i + 1) % languages.size()];
}

const Sentences& corpus_side(const std::map<std::string, std::map<std::string, Sentences>>& corpora,
                             const std::string& domain, const std::string& lang, const char* kind) {
  auto d = corpora.find(domain);
  if (d == corpora.end() || !d->second.count(lang) || d->second.at(lang).empty()) {
    throw std::invalid_argument(fmt::format("no {} corpus for domain '{}' language '{}'", kind, domain, lang));
  }
  return d->second.at(lang);
}

std::vector<std::size_t> sample_rows(std::mt19937_64& rng, std::size_t n, std::size_t count) {
  std::vector<std::size_t> rows(count);
  for (auto& r : rows) r = static_cast<std::size_t>(uniform_index(rng, n));
  return rows;
}

struct StageRngs {
  std::mt19937_64 batch, mass, dropout;
};

TaskBatch assemble(const TrainTaskSpec& task, std::uint64_t round, const TransformerModel& model,
                   const RunContext& ctx, StageRngs& rngs, std::uint64_t step) {
  const auto& data = *ctx.data;
  const auto& tok = data.tokenizer;
  const auto& langs = data.corpora.languages;
  const auto& opts = ctx.options;
  const auto& lang = task.languages[round % task.languages.size()];
  TaskBatch tb;
  tb.kind = task.kind;
  tb.domain = task.domain;
  switch (task.kind) {
    case TaskKind::kSupervised: {
      tb.corpus = parallel_corpus_id(task.domain);
      tb.target_language = lang;
      tb.source_language = other_language(langs, lang);
      const auto& src = corpus_side(data.corpora.parallel, task.domain, tb.source_language, "parallel");
      const auto& tgt = corpus_side(data.corpora.parallel, task.domain, tb.target_language, "parallel");
      for (auto i : sample_rows(rngs.batch, src.size(), opts.batch_size)) {
        tb.sources.push_back(src[i]);
        tb.targets.push_back(tgt[i]);
      }
      tb.batch = supervised_batch(tb.sources, tb.targets, tok.language_tag(tb.target_language));
      break;
    }
    case TaskKind::kMass: {
      tb.corpus = mono_corpus_id(task.domain, lang);
      tb.source_language = tb.target_language = lang;
      const auto& mono = corpus_side(data.corpora.mono, task.domain, lang, "monolingual");
      std::vector<MassExample> examples;
      for (auto i : sample_rows(rngs.batch, mono.size(), opts.batch_size)) {
        tb.targets.push_back(mono[i]);
        examples.push_back(mask_span(mono[i], opts.mask_fraction, rngs.mass));
      }
      tb.batch = mass_batch(examples, tok.language_tag(lang));
      break;
    }
    case TaskKind::kBackTranslation: {
      tb.corpus = mono_corpus_id(task.domain, lang);
      tb.target_language = lang;
      tb.source_language = other_language(langs, lang);
      const auto& mono = corpus_side(data.corpora.mono, task.domain, lang, "monolingual");
      Sentences sents;
      for (auto i : sample_rows(rngs.batch, mono.size(), opts.batch_size)) sents.push_back(mono[i]);
      auto pairs = backtranslate_batch(model, sents, tok.language_tag(tb.source_language), opts.bt_beam, step);
      for (auto& p : pairs) {
        tb.sources.push_back(std::move(p.pseudo_source));
        tb.targets.push_back(std::move(p.true_target));
      }
      tb.batch = supervised_batch(tb.sources, tb.targets, tok.language_tag(tb.target_language));
      break;
    }
  }
  return tb;
}

void evaluate_into(const TransformerModel& model, const StageSpec& stage, std::uint64_t step, const RunContext& ctx,
                   MetricsReport& report) {
  for (const auto& test : ctx.data->tests) {
    const auto& wanted = ctx.options.eval_sets;
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), test.name) == wanted.end()) continue;
    report.append({ctx.run_id, ctx.config, stage.id, step, test.name,
                   evaluate_test_set(model, ctx.data->tokenizer, test)});
  }
}

}  // namespace

StageResult run_stage(TransformerModel& model, const StageSpec& stage, const RunContext& ctx) {
  if (!ctx.data) throw std::invalid_argument("run_stage: no experiment data");
  stage.validate();
  if (ctx.options.batch_size < 1) throw std::invalid_argument("run_stage: batch size must be >= 1");
  if (ctx.options.eval_every < 1) throw std::invalid_argument("run_stage: eval cadence must be >= 1");
  const auto& config = model.config();
  if (config.vocab_size != ctx.data->tokenizer.vocab_size() ||
      config.num_special_tokens != ctx.data->tokenizer.num_special_tokens()) {
    throw std::invalid_argument(fmt::format("run_stage: model vocabulary ({} ids, {} special) does not match the "
                                            "tokenizer ({} ids, {} special)",
                                            config.vocab_size, config.num_special_tokens,
                                            ctx.data->tokenizer.vocab_size(),
                                            ctx.data->tokenizer.num_special_tokens()));
  }

  const auto prefix = fmt::format("stage{}/", stage.id);
  std::vector<double> weights;
  for (const auto& t : stage.tasks) weights.push_back(t.weight);
  TaskSampler sampler(weights, substream(ctx.seed, prefix + "sampler"));
  StageRngs rngs{substream(ctx.seed, prefix + "batch"), substream(ctx.seed, prefix + "mass"),
                 substream(ctx.seed, prefix + "dropout")};
  ForwardOptions fwd;
  if (config.dropout_rate > 0.0) fwd.dropout_rng = &rngs.dropout;

  AdamState adam(model.params(), ctx.options.adam);
  std::vector<std::uint64_t> rounds(stage.tasks.size(), 0);
  StageResult result;
  for (auto kind : {TaskKind::kSupervised, TaskKind::kMass, TaskKind::kBackTranslation}) result.task_counts[kind] = 0;
  double interval_loss = 0;
  std::uint64_t interval_steps = 0;

  for (std::uint64_t step = 1; step <= stage.budget; ++step) {
    const auto idx = sampler.next();
    const auto& task = stage.tasks[idx];
    auto tb = assemble(task, rounds[idx]++, model, ctx, rngs, adam.step);
    if (ctx.observer) ctx.observer(tb);

    Tape tape;
    BoundParameters bound(tape, model.params());
    auto loss = sequence_loss(config, bound, tape, tb.batch, fwd);
    const double value = loss.value().item();
    if (!std::isfinite(value)) throw TrainingDivergence(stage.id, step, value);
    adam_step(model.params(), bound.named(tape.backward(loss)), adam);

    ++result.task_counts[task.kind];
    result.losses.push_back(value);
    interval_loss += value;
    ++interval_steps;
    if (step % ctx.options.eval_every == 0 || step == stage.budget) {
      evaluate_into(model, stage, step, ctx, result.metrics);
      result.log.push_back({ctx.run_id, stage.id, step, result.task_counts[TaskKind::kSupervised],
                            result.task_counts[TaskKind::kMass], result.task_counts[TaskKind::kBackTranslation],
                            interval_loss / static_cast<double>(interval_steps)});
      interval_loss = 0;
      interval_steps = 0;
    }
  }
  return result;
}

RunResult run_stages(TransformerModel& model, const std::vector<StageSpec>& stages, const RunContext& ctx,
                     const std::function<void(const TransformerModel&, const StageSpec&, std::size_t)>& after_stage) {
  RunResult out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (!stages[i].init_from_previous) model = initial_model(model.config(), ctx.seed);
    auto r = run_stage(model, stages[i], ctx);
    out.metrics.extend(r.metrics);
    out.log.insert(out.log.end(), r.log.begin(), r.log.end());
    if (after_stage) after_stage(model, stages[i], i);
  }
  return out;
}

UnsupervisedAudit::UnsupervisedAudit(const ExperimentData& data) {
  for (const auto& t : data.tests) {
    if (t.name == kGeneralDomain) continue;
    for (std::size_t i = 0; i < t.source.size(); ++i) {
      forbidden_.insert({t.source[i], t.target[i]});
      forbidden_.insert({t.target[i], t.source[i]});
    }
  }
  const auto& L = data.corpora.languages;
  auto general = data.corpora.parallel.find(kGeneralDomain);
  if (general != data.corpora.parallel.end()) {
    const auto& a = general->second.at(L[0]);
    const auto& b = general->second.at(L[1]);
    for (std::size_t i = 0; i < a.size(); ++i) {
      allowed_parallel_.insert({a[i], b[i]});
      allowed_parallel_.insert({b[i], a[i]});
    }
  }
  for (const auto& [domain, by_lang] : data.corpora.mono) {
    for (const auto& [lang, sents] : by_lang) mono_.insert(sents.begin(), sents.end());
  }
}

void UnsupervisedAudit::flag(std::string message) {
  ++violations_;
  if (messages_.size() < 20) messages_.push_back(std::move(message));
}

void UnsupervisedAudit::observe(const TaskBatch& b) {
  for (std::size_t i = 0; i < b.targets.size(); ++i) {
    ++rows_checked_;
    if (b.kind == TaskKind::kSupervised) {
      if (b.domain != kGeneralDomain) flag(fmt::format("supervised batch on in-domain corpus {}", b.corpus));
      if (!allowed_parallel_.count({b.sources[i], b.targets[i]})) {
        flag(fmt::format("supervised row {} of {} is not a general parallel pair", i, b.corpus));
      }
    } else if (!mono_.count(b.targets[i])) {
      flag(fmt::format("{} row {} of {} is not monolingual text", task_kind_name(b.kind), i, b.corpus));
    }
    if (i < b.sources.size() && forbidden_.count({b.sources[i], b.targets[i]})) {
      flag(fmt::format("{} row {} of {} is an in-domain test pair", task_kind_name(b.kind), i, b.corpus));
    }
  }
}

}  // namespace udmt
