#include "udmt/eval_report.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <stdexcept>

#include "udmt/data_synth.hpp"

namespace udmt {

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

namespace {

std::map<std::vector<std::string>, std::uint64_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<std::vector<std::string>, std::uint64_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<long>(i), tokens.begin() + static_cast<long>(i + n))];
  }
  return counts;
}

double brevity_penalty(const BleuStats& s) {
  if (s.hyp_len >= s.ref_len) return 1.0;
  return std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len));
}

}  // namespace

BleuStats bleu_stats(const std::string& hypothesis, const std::string& reference) {
  const auto hyp = split_tokens(hypothesis);
  const auto ref = split_tokens(reference);
  BleuStats s;
  s.hyp_len = hyp.size();
  s.ref_len = ref.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto hc = ngram_counts(hyp, n);
    const auto rc = ngram_counts(ref, n);
    for (const auto& [gram, count] : hc) {
      auto it = rc.find(gram);
      if (it != rc.end()) s.matches[n - 1] += std::min(count, it->second);
    }
    s.totals[n - 1] = hyp.size() >= n ? hyp.size() - n + 1 : 0;
  }
  return s;
}

double bleu_from_stats(const BleuStats& s) {
  if (s.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (s.matches[n] == 0 || s.totals[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]));
  }
  return 100.0 * brevity_penalty(s) * std::exp(log_sum / 4.0);
}

double corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: empty hypothesis list");
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument(fmt::format("corpus_bleu: {} hypotheses for {} references", hypotheses.size(),
                                            references.size()));
  }
  BleuStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += bleu_stats(hypotheses[i], references[i]);
  return bleu_from_stats(total);
}

double sentence_bleu(const std::string& hypothesis, const std::string& reference) {
  const auto s = bleu_stats(hypothesis, reference);
  if (s.hyp_len == 0 || s.matches[0] == 0) return 0.0;
  double log_sum = std::log(static_cast<double>(s.matches[0]) / static_cast<double>(s.totals[0]));
  for (std::size_t n = 1; n < 4; ++n) {
    log_sum += std::log(static_cast<double>(s.matches[n] + 1) / static_cast<double>(s.totals[n] + 1));
  }
  return 100.0 * brevity_penalty(s) * std::exp(log_sum / 4.0);
}

void MetricsReport::append(MetricsRow row) {
  for (const auto& r : rows_) {
    if (r.run_id == row.run_id && r.adapt_step == row.adapt_step && r.train_step == row.train_step &&
        r.test_set == row.test_set) {
      throw std::invalid_argument(fmt::format("metrics: duplicate row for run '{}', step {}/{}, test set '{}'",
                                              row.run_id, row.adapt_step, row.train_step, row.test_set));
    }
  }
  rows_.push_back(std::move(row));
}

void MetricsReport::extend(const MetricsReport& other) {
  for (const auto& r : other.rows()) append(r);
}

std::map<std::string, double> MetricsReport::final_scores(const std::string& run_id) const {
  std::map<std::string, std::pair<std::pair<std::uint64_t, std::uint64_t>, double>> best;
  for (const auto& r : rows_) {
    if (r.run_id != run_id) continue;
    const auto key = std::make_pair(r.adapt_step, r.train_step);
    auto it = best.find(r.test_set);
    if (it == best.end() || key >= it->second.first) best[r.test_set] = {key, r.bleu};
  }
  std::map<std::string, double> out;
  for (const auto& [set, v] : best) out[set] = v.second;
  return out;
}

double MetricsReport::score_at(const std::string& run_id, std::uint64_t adapt_step, const std::string& test_set) const {
  const MetricsRow* found = nullptr;
  for (const auto& r : rows_) {
    if (r.run_id == run_id && r.adapt_step == adapt_step && r.test_set == test_set &&
        (!found || r.train_step >= found->train_step)) {
      found = &r;
    }
  }
  if (!found) {
    throw std::invalid_argument(
        fmt::format("metrics: no score for run '{}', step {}, test set '{}'", run_id, adapt_step, test_set));
  }
  return found->bleu;
}

std::vector<std::string> MetricsReport::run_ids() const {
  std::vector<std::string> ids;
  for (const auto& r : rows_) {
    if (std::find(ids.begin(), ids.end(), r.run_id) == ids.end()) ids.push_back(r.run_id);
  }
  return ids;
}

std::map<std::string, double> forgetting_delta(const MetricsReport& report, const std::string& run,
                                               const std::string& baseline_run) {
  const auto a = report.final_scores(run);
  const auto b = report.final_scores(baseline_run);
  if (a.empty()) throw std::invalid_argument(fmt::format("forgetting_delta: no rows for run '{}'", run));
  if (b.empty()) throw std::invalid_argument(fmt::format("forgetting_delta: no rows for run '{}'", baseline_run));
  std::map<std::string, double> delta;
  for (const auto& [set, score] : a) {
    auto it = b.find(set);
    if (it == b.end()) {
      throw std::invalid_argument(
          fmt::format("forgetting_delta: test set '{}' missing from run '{}'", set, baseline_run));
    }
    delta[set] = score - it->second;
  }
  for (const auto& [set, score] : b) {
    if (!a.count(set)) throw std::invalid_argument(fmt::format("forgetting_delta: test set '{}' missing from run '{}'", set, run));
  }
  return delta;
}

namespace {

void check_field(const std::string& f) {
  if (f.find_first_of(",\n\r\"") != std::string::npos) {
    throw std::invalid_argument(fmt::format("metrics: field '{}' contains a CSV delimiter", f));
  }
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string metrics_to_csv(const MetricsReport& report) {
  std::string out = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& r : report.rows()) {
    check_field(r.run_id);
    check_field(r.config);
    check_field(r.test_set);
    // %.17g round-trips every double exactly.
    out += fmt::format("{},{},{},{},{},{:.17g}\n", r.run_id, r.config, r.adapt_step, r.train_step, r.test_set, r.bleu);
  }
  return out;
}

MetricsReport metrics_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsCsvHeader) throw std::invalid_argument("metrics csv: bad header");
  MetricsReport report;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split_commas(line);
    if (f.size() != 6) throw std::invalid_argument(fmt::format("metrics csv line {}: expected 6 fields", line_no));
    try {
      report.append({f[0], f[1], std::stoull(f[2]), std::stoull(f[3]), f[4], std::stod(f[5])});
    } catch (const std::logic_error& e) {
      throw std::invalid_argument(fmt::format("metrics csv line {}: {}", line_no, e.what()));
    }
  }
  return report;
}

void emit_report(const MetricsReport& report, const std::optional<std::filesystem::path>& csv_path,
                 const std::optional<std::filesystem::path>& json_path, const SummarySpec& spec) {
  auto open = [](const std::filesystem::path& p) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot write report {}", p.string()));
    return out;
  };
  if (csv_path) {
    auto out = open(*csv_path);
    out << metrics_to_csv(report);
    if (!out) throw std::runtime_error(fmt::format("failed writing {}", csv_path->string()));
  }
  if (!json_path) return;

  nlohmann::ordered_json j;
  j["columns"] = {"run_id", "config", "adapt_step", "train_step", "test_set", "bleu"};
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : report.rows()) {
    rows.push_back({{"run_id", r.run_id}, {"config", r.config}, {"adapt_step", r.adapt_step},
                    {"train_step", r.train_step}, {"test_set", r.test_set}, {"bleu", r.bleu}});
  }
  j["rows"] = rows;
  auto summary = nlohmann::ordered_json::object();
  for (const auto& run : report.run_ids()) {
    const auto finals = report.final_scores(run);
    std::string config;
    for (const auto& r : report.rows()) {
      if (r.run_id == run) config = r.config;
    }
    std::optional<std::string> in_domain = spec.in_domain_test;
    if (!in_domain) {
      for (const auto& [set, s] : finals) {
        if (set != spec.general_test) {
          in_domain = set;
          break;
        }
      }
    }
    nlohmann::ordered_json entry;
    entry["config"] = config;
    auto gen = finals.find(spec.general_test);
    auto dom = in_domain ? finals.find(*in_domain) : finals.end();
    entry["in_domain_test"] = in_domain ? *in_domain : "";
    entry["in_domain"] = dom != finals.end() ? nlohmann::ordered_json(dom->second) : nlohmann::ordered_json();
    entry["general"] = gen != finals.end() ? nlohmann::ordered_json(gen->second) : nlohmann::ordered_json();
    entry["display"] = fmt::format("{} ({})", dom != finals.end() ? fmt::format("{:.2f}", dom->second) : "-",
                                   gen != finals.end() ? fmt::format("{:.2f}", gen->second) : "-");
    summary[run] = entry;
  }
  j["summary"] = summary;
  auto out = open(*json_path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error(fmt::format("failed writing {}", json_path->string()));
}

}  // namespace udmt
