#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace udmt {

/// Clipped n-gram matches and hypothesis n-gram totals for n = 1..4, plus lengths.
struct BleuStats {
  std::array<std::uint64_t, 4> matches{};
  std::array<std::uint64_t, 4> totals{};
  std::uint64_t hyp_len = 0;
  std::uint64_t ref_len = 0;

  BleuStats& operator+=(const BleuStats& other);
  bool operator==(const BleuStats&) const = default;
};

/// Statistics of one whitespace-tokenized (hypothesis, reference) pair.
BleuStats bleu_stats(const std::string& hypothesis, const std::string& reference);

/// BLEU-4 in [0, 100] from summed statistics: brevity penalty
/// min(1, exp(1 - ref/hyp)) times the geometric mean of the precisions;
/// 0 when any precision is 0 or the hypothesis is empty.
double bleu_from_stats(const BleuStats& stats);

/// Corpus-level, case-sensitive, unsmoothed BLEU-4.
double corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references);

/// Single-pair BLEU with add-one smoothing of numerator and denominator for n >= 2.
double sentence_bleu(const std::string& hypothesis, const std::string& reference);

struct MetricsRow {
  std::string run_id;
  std::string config;
  /// Stage index within a training run, or plan step within an adaptation.
  std::uint64_t adapt_step = 0;
  /// Update count within that stage or plan step.
  std::uint64_t train_step = 0;
  std::string test_set;
  double bleu = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

/// Append-only table of evaluation results.
class MetricsReport {
 public:
  /// Throws if (run, adapt_step, train_step, test_set) is already present.
  void append(MetricsRow row);
  void extend(const MetricsReport& other);
  const std::vector<MetricsRow>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }

  /// Last-checkpoint BLEU per test set of a run.
  std::map<std::string, double> final_scores(const std::string& run_id) const;
  /// BLEU of a test set at the last checkpoint of a given adaptation step.
  double score_at(const std::string& run_id, std::uint64_t adapt_step, const std::string& test_set) const;
  std::vector<std::string> run_ids() const;

 private:
  std::vector<MetricsRow> rows_;
};

/// Per test set: final BLEU of `run` minus final BLEU of `baseline_run`.
/// Throws if the runs were not evaluated on the same test sets.
std::map<std::string, double> forgetting_delta(const MetricsReport& report, const std::string& run,
                                               const std::string& baseline_run);

inline constexpr const char* kMetricsCsvHeader = "run_id,config,adapt_step,train_step,test_set,bleu";

std::string metrics_to_csv(const MetricsReport& report);
MetricsReport metrics_from_csv(const std::string& text);

/// Which test sets the "in-domain (general)" summary reads.
struct SummarySpec {
  std::string general_test = "general";
  /// Defaults to the first non-general test set of each run.
  std::optional<std::string> in_domain_test;
};

/// Writes CSV and/or JSON. The JSON holds every row plus a "summary" object:
/// run_id -> {config, in_domain, general, display: "in-domain (general)"}.
void emit_report(const MetricsReport& report, const std::optional<std::filesystem::path>& csv_path,
                 const std::optional<std::filesystem::path>& json_path, const SummarySpec& spec = {});

}  // namespace udmt
