#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace udmt {

/// Parameters of a synthetic language pair. Source tokens are written
/// "s<k>", target tokens "t<k>"; ids [0, v_general) are general-domain and
/// each domain d owns the next v_domain ids.
struct SynthConfig {
  std::uint64_t seed = 1;
  std::size_t v_general = 160;
  std::size_t v_domain = 40;
  std::size_t num_domains = 2;
  /// Probability that a sentence unit is an in-domain token (domains only).
  double f_new = 0.5;
  /// Reordering window: target order is reversed within consecutive blocks.
  std::size_t window = 2;
  std::size_t min_len = 4;
  std::size_t max_len = 12;
  /// Unigram weights are proportional to 1 / (rank + 1)^zipf_exponent.
  double zipf_exponent = 1.0;
  /// Each in-domain token follows a fixed general "anchor" token, giving it a
  /// recurring context that monolingual objectives can align across languages.
  bool anchored = true;

  void validate() const;
};

struct SynthSizes {
  std::size_t general_parallel = 8000;
  std::size_t general_dev = 500;
  std::size_t general_mono = 8000;
  std::size_t domain_mono = 4000;
  std::size_t test = 500;

  void validate() const;
};

/// Domain index -> name: 0 -> "A", 1 -> "B", ...
std::string domain_name(std::size_t index);

/// A synthetic language pair: a partition-preserving token bijection (the
/// cipher) followed by block reversal of width `window`.
class SynthLang {
 public:
  explicit SynthLang(SynthConfig config);

  const SynthConfig& config() const { return config_; }
  std::size_t num_tokens() const { return config_.v_general + config_.v_domain * config_.num_domains; }

  /// Samples a source sentence; nullopt selects the general domain.
  std::vector<std::string> sample_source(std::mt19937_64& rng, std::optional<std::size_t> domain) const;

  std::vector<std::string> oracle_translate(const std::vector<std::string>& source) const;
  std::vector<std::string> oracle_inverse(const std::vector<std::string>& target) const;

  /// Domain owning a source or target token: nullopt for general tokens.
  /// Throws on tokens outside the language.
  std::optional<std::size_t> token_domain(const std::string& token) const;

  /// Normalized unigram weights over general ids and over one domain's ids.
  const std::vector<double>& general_weights() const { return general_weights_; }
  const std::vector<double>& domain_weights() const { return domain_weights_; }
  /// General id that precedes in-domain token k of `domain` when anchored.
  std::size_t anchor(std::size_t domain, std::size_t k) const { return anchors_.at(domain).at(k); }

  static std::string source_token(std::size_t id) { return "s" + std::to_string(id); }
  static std::string target_token(std::size_t id) { return "t" + std::to_string(id); }

 private:
  std::size_t parse(const std::string& token, char side) const;
  std::vector<std::string> reorder(std::vector<std::string> tokens) const;

  SynthConfig config_;
  std::vector<std::size_t> pi_;
  std::vector<std::size_t> pi_inverse_;
  std::vector<double> general_weights_;
  std::vector<double> domain_weights_;
  std::vector<std::vector<std::size_t>> anchors_;
};

/// Aligned sentence pairs (whitespace-joined tokens).
struct ParallelSet {
  std::vector<std::string> source;
  std::vector<std::string> target;
  std::size_t size() const { return source.size(); }
};

struct DomainData {
  std::vector<std::string> mono_source;
  std::vector<std::string> mono_target;
  /// Oracle parallel data for evaluation only; never handed to training.
  ParallelSet test;
};

/// Corpora of one experiment. The in-domain parallel data exists only as test splits.
struct DomainDataset {
  std::vector<std::string> languages = {"src", "tgt"};
  ParallelSet general_train;
  ParallelSet general_dev;
  ParallelSet general_test;
  std::vector<std::string> general_mono_source;
  std::vector<std::string> general_mono_target;
  std::map<std::string, DomainData> domains;

  const DomainData& domain(const std::string& name) const;
};

/// Deterministic in the config seed. Mono corpora take one side of
/// independently sampled pairs, so they are never mutual translations.
/// Test pairs are redrawn until neither side occurs in training text (general
/// parallel, any mono corpus); throws std::invalid_argument if that is not
/// achievable within 1000 draws per pair.
DomainDataset gen_dataset(const SynthLang& lang, const SynthSizes& sizes);

std::string join_tokens(const std::vector<std::string>& tokens);
std::vector<std::string> split_tokens(const std::string& sentence);

enum class CorpusFormat { kLines, kTsvPairs };

struct Corpus {
  /// Filled for kLines.
  std::vector<std::string> sentences;
  /// Filled for kTsvPairs.
  std::vector<std::pair<std::string, std::string>> pairs;
};

/// One sentence per line (or "source<TAB>target"). Trailing whitespace is
/// stripped; empty lines, malformed pairs and invalid UTF-8 are rejected with
/// the line number.
Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format);
void save_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);
void save_tsv_pairs(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& pairs);

/// Writes every split as a line file plus manifest.json describing paths,
/// roles, languages, domains and line counts. Returns the manifest path.
std::filesystem::path save_dataset(const DomainDataset& data, const std::filesystem::path& dir,
                                   const std::optional<SynthConfig>& synth = {});
DomainDataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace udmt
