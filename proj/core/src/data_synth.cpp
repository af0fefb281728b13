#include "udmt/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <set>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "udmt/rng.hpp"
#include "udmt/tokenizer.hpp"

namespace udmt {

void SynthConfig::validate() const {
  if (v_general < 10 || v_domain < 10) {
    throw std::invalid_argument(fmt::format("synth: vocab sizes must be >= 10 (general {}, domain {})", v_general, v_domain));
  }
  if (!(f_new >= 0.0 && f_new <= 1.0)) throw std::invalid_argument(fmt::format("synth: f_new {} not in [0, 1]", f_new));
  if (window < 1) throw std::invalid_argument("synth: window must be >= 1");
  if (min_len < 1 || min_len > max_len) {
    throw std::invalid_argument(fmt::format("synth: invalid length range [{}, {}]", min_len, max_len));
  }
  if (anchored && v_domain > v_general) {
    throw std::invalid_argument("synth: anchored generation needs v_domain <= v_general");
  }
  if (!(zipf_exponent >= 0.0)) throw std::invalid_argument("synth: zipf exponent must be >= 0");
}

void SynthSizes::validate() const {
  for (auto [name, n] : {std::pair{"general_parallel", general_parallel}, std::pair{"general_dev", general_dev},
                         std::pair{"general_mono", general_mono}, std::pair{"domain_mono", domain_mono},
                         std::pair{"test", test}}) {
    if (n == 0) throw std::invalid_argument(fmt::format("synth: size '{}' must be positive", name));
  }
}

std::string domain_name(std::size_t index) {
  if (index >= 26) throw std::invalid_argument("synth: at most 26 domains");
  return std::string(1, static_cast<char>('A' + index));
}

namespace {

std::vector<double> zipf_weights(std::size_t n, double exponent) {
  std::vector<double> w(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += w[i] = 1.0 / std::pow(static_cast<double>(i + 1), exponent);
  for (auto& x : w) x /= total;
  return w;
}

std::size_t sample_categorical(std::mt19937_64& rng, const std::vector<double>& weights) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;
}

void shuffle(std::mt19937_64& rng, std::vector<std::size_t>& v) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

}  // namespace

SynthLang::SynthLang(SynthConfig config) : config_(config) {
  config_.validate();
  auto rng = substream(config_.seed, "synth/lang");
  const auto n = num_tokens();
  pi_.resize(n);
  pi_inverse_.resize(n);
  auto permute_block = [&](std::size_t begin, std::size_t count) {
    std::vector<std::size_t> image(count);
    for (std::size_t i = 0; i < count; ++i) image[i] = begin + i;
    shuffle(rng, image);
    for (std::size_t i = 0; i < count; ++i) {
      pi_[begin + i] = image[i];
      pi_inverse_[image[i]] = begin + i;
    }
  };
  permute_block(0, config_.v_general);
  for (std::size_t d = 0; d < config_.num_domains; ++d) permute_block(config_.v_general + d * config_.v_domain, config_.v_domain);

  general_weights_ = zipf_weights(config_.v_general, config_.zipf_exponent);
  domain_weights_ = zipf_weights(config_.v_domain, config_.zipf_exponent);
  for (std::size_t d = 0; d < config_.num_domains; ++d) {
    std::vector<std::size_t> pool(config_.v_general);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    shuffle(rng, pool);
    pool.resize(config_.v_domain);
    anchors_.push_back(std::move(pool));
  }
}

std::vector<std::string> SynthLang::sample_source(std::mt19937_64& rng, std::optional<std::size_t> domain) const {
  if (domain && *domain >= config_.num_domains) {
    throw std::invalid_argument(fmt::format("synth: domain index {} outside {} domains", *domain, config_.num_domains));
  }
  const auto len = config_.min_len + uniform_index(rng, config_.max_len - config_.min_len + 1);
  std::vector<std::string> out;
  while (out.size() < len) {
    if (domain && uniform01(rng) < config_.f_new) {
      const auto k = sample_categorical(rng, domain_weights_);
      const auto id = config_.v_general + *domain * config_.v_domain + k;
      if (!config_.anchored) {
        out.push_back(source_token(id));
        continue;
      }
      if (out.size() + 2 <= len) {
        out.push_back(source_token(anchors_[*domain][k]));
        out.push_back(source_token(id));
        continue;
      }
    }
    out.push_back(source_token(sample_categorical(rng, general_weights_)));
  }
  return out;
}

std::size_t SynthLang::parse(const std::string& token, char side) const {
  auto bad = [&] {
    return std::invalid_argument(fmt::format("synth: unknown {} token '{}'", side == 's' ? "source" : "target", token));
  };
  if (token.size() < 2 || token[0] != side) throw bad();
  std::size_t id = 0;
  for (std::size_t i = 1; i < token.size(); ++i) {
    if (token[i] < '0' || token[i] > '9' || (i == 1 && token[i] == '0' && token.size() > 2)) throw bad();
    id = id * 10 + static_cast<std::size_t>(token[i] - '0');
    if (id >= num_tokens()) throw bad();
  }
  return id;
}

std::vector<std::string> SynthLang::reorder(std::vector<std::string> tokens) const {
  for (std::size_t i = 0; i < tokens.size(); i += config_.window) {
    const auto end = std::min(tokens.size(), i + config_.window);
    std::reverse(tokens.begin() + static_cast<long>(i), tokens.begin() + static_cast<long>(end));
  }
  return tokens;
}

std::vector<std::string> SynthLang::oracle_translate(const std::vector<std::string>& source) const {
  std::vector<std::string> mapped;
  for (const auto& t : source) mapped.push_back(target_token(pi_[parse(t, 's')]));
  return reorder(std::move(mapped));
}

std::vector<std::string> SynthLang::oracle_inverse(const std::vector<std::string>& target) const {
  std::vector<std::string> mapped;
  for (const auto& t : target) mapped.push_back(source_token(pi_inverse_[parse(t, 't')]));
  return reorder(std::move(mapped));
}

std::optional<std::size_t> SynthLang::token_domain(const std::string& token) const {
  const auto id = parse(token, token.empty() ? 's' : token[0]);
  if (id < config_.v_general) return std::nullopt;
  return (id - config_.v_general) / config_.v_domain;
}

const DomainData& DomainDataset::domain(const std::string& name) const {
  auto it = domains.find(name);
  if (it == domains.end()) throw std::invalid_argument(fmt::format("unknown domain '{}'", name));
  return it->second;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::vector<std::string> split_tokens(const std::string& sentence) {
  std::istringstream in(sentence);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

DomainDataset gen_dataset(const SynthLang& lang, const SynthSizes& sizes) {
  sizes.validate();
  const auto seed = lang.config().seed;
  DomainDataset data;
  auto parallel = [&](const std::string& stream, std::size_t n, std::optional<std::size_t> domain) {
    auto rng = substream(seed, "synth/" + stream);
    ParallelSet set;
    for (std::size_t i = 0; i < n; ++i) {
      auto s = lang.sample_source(rng, domain);
      set.source.push_back(join_tokens(s));
      set.target.push_back(join_tokens(lang.oracle_translate(s)));
    }
    return set;
  };
  data.general_train = parallel("general/train", sizes.general_parallel, std::nullopt);
  data.general_dev = parallel("general/dev", sizes.general_dev, std::nullopt);
  data.general_mono_source = parallel("general/mono-src", sizes.general_mono, std::nullopt).source;
  data.general_mono_target = parallel("general/mono-tgt", sizes.general_mono, std::nullopt).target;
  for (std::size_t d = 0; d < lang.config().num_domains; ++d) {
    DomainData dd;
    dd.mono_source = parallel(domain_name(d) + "/mono-src", sizes.domain_mono, d).source;
    dd.mono_target = parallel(domain_name(d) + "/mono-tgt", sizes.domain_mono, d).target;
    data.domains.emplace(domain_name(d), std::move(dd));
  }

  // Test pairs never share a source or target sentence with training text.
  std::set<std::string> seen_source(data.general_train.source.begin(), data.general_train.source.end());
  std::set<std::string> seen_target(data.general_train.target.begin(), data.general_train.target.end());
  seen_source.insert(data.general_mono_source.begin(), data.general_mono_source.end());
  seen_target.insert(data.general_mono_target.begin(), data.general_mono_target.end());
  for (const auto& [name, dd] : data.domains) {
    seen_source.insert(dd.mono_source.begin(), dd.mono_source.end());
    seen_target.insert(dd.mono_target.begin(), dd.mono_target.end());
  }
  auto test = [&](const std::string& stream, std::optional<std::size_t> domain) {
    auto rng = substream(seed, "synth/" + stream);
    ParallelSet set;
    const std::size_t max_attempts = 1000 * sizes.test;
    for (std::size_t attempt = 0; set.size() < sizes.test; ++attempt) {
      if (attempt == max_attempts) {
        throw std::invalid_argument(fmt::format("cannot draw {} test pairs for {} disjoint from training text",
                                                sizes.test, stream));
      }
      auto s = lang.sample_source(rng, domain);
      auto src = join_tokens(s);
      auto tgt = join_tokens(lang.oracle_translate(s));
      if (seen_source.count(src) || seen_target.count(tgt)) continue;
      set.source.push_back(std::move(src));
      set.target.push_back(std::move(tgt));
    }
    return set;
  };
  data.general_test = test("general/test", std::nullopt);
  for (std::size_t d = 0; d < lang.config().num_domains; ++d) data.domains.at(domain_name(d)).test = test(domain_name(d) + "/test", d);
  return data;
}

namespace {

std::string strip_trailing(std::string s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n')) s.pop_back();
  return s;
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open corpus {}", path.string()));
  Corpus corpus;
  std::size_t line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto line = strip_trailing(raw);
    auto fail = [&](const std::string& why) {
      return std::runtime_error(fmt::format("{}:{}: {}", path.string(), line_no, why));
    };
    if (line.empty()) throw fail("empty line");
    try {
      utf8_chars(line);
    } catch (const std::invalid_argument&) {
      throw fail("invalid UTF-8");
    }
    if (format == CorpusFormat::kLines) {
      corpus.sentences.push_back(line);
    } else {
      const auto tab = line.find('\t');
      if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
        throw fail("expected exactly one tab separating source and target");
      }
      auto src = strip_trailing(line.substr(0, tab));
      auto tgt = line.substr(tab + 1);
      if (src.empty() || tgt.empty()) throw fail("empty side in sentence pair");
      corpus.pairs.emplace_back(std::move(src), std::move(tgt));
    }
  }
  return corpus;
}

void save_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw std::runtime_error(fmt::format("failed writing {}", path.string()));
}

void save_tsv_pairs(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  for (const auto& [s, t] : pairs) out << s << '\t' << t << '\n';
  if (!out) throw std::runtime_error(fmt::format("failed writing {}", path.string()));
}

namespace {

using nlohmann::ordered_json;

struct SplitEntry {
  std::string role;
  std::string domain;
  std::string language;
  std::string file;
  const std::vector<std::string>* lines;
};

}  // namespace

std::filesystem::path save_dataset(const DomainDataset& data, const std::filesystem::path& dir,
                                   const std::optional<SynthConfig>& synth) {
  if (data.languages.size() != 2) throw std::invalid_argument("dataset: exactly two languages required");
  std::filesystem::create_directories(dir);
  const auto& src = data.languages[0];
  const auto& tgt = data.languages[1];
  std::vector<SplitEntry> entries = {
      {"parallel_train", "general", src, "general.train." + src, &data.general_train.source},
      {"parallel_train", "general", tgt, "general.train." + tgt, &data.general_train.target},
      {"parallel_dev", "general", src, "general.dev." + src, &data.general_dev.source},
      {"parallel_dev", "general", tgt, "general.dev." + tgt, &data.general_dev.target},
      {"parallel_test", "general", src, "general.test." + src, &data.general_test.source},
      {"parallel_test", "general", tgt, "general.test." + tgt, &data.general_test.target},
      {"mono", "general", src, "general.mono." + src, &data.general_mono_source},
      {"mono", "general", tgt, "general.mono." + tgt, &data.general_mono_target},
  };
  for (const auto& [name, d] : data.domains) {
    entries.push_back({"mono", name, src, name + ".mono." + src, &d.mono_source});
    entries.push_back({"mono", name, tgt, name + ".mono." + tgt, &d.mono_target});
    entries.push_back({"parallel_test", name, src, name + ".test." + src, &d.test.source});
    entries.push_back({"parallel_test", name, tgt, name + ".test." + tgt, &d.test.target});
  }
  ordered_json manifest;
  manifest["format"] = "udmt-dataset";
  manifest["version"] = 1;
  manifest["languages"] = data.languages;
  std::vector<std::string> domains;
  for (const auto& [name, d] : data.domains) domains.push_back(name);
  manifest["domains"] = domains;
  if (synth) {
    manifest["synth"] = {{"seed", synth->seed},
                         {"v_general", synth->v_general},
                         {"v_domain", synth->v_domain},
                         {"num_domains", synth->num_domains},
                         {"f_new", synth->f_new},
                         {"window", synth->window},
                         {"min_len", synth->min_len},
                         {"max_len", synth->max_len},
                         {"zipf_exponent", synth->zipf_exponent},
                         {"anchored", synth->anchored}};
  }
  auto splits = ordered_json::array();
  for (const auto& e : entries) {
    save_lines(dir / e.file, *e.lines);
    splits.push_back({{"role", e.role}, {"domain", e.domain}, {"language", e.language}, {"path", e.file},
                      {"lines", e.lines->size()}});
  }
  manifest["splits"] = splits;
  const auto path = dir / "manifest.json";
  std::ofstream out(path);
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error(fmt::format("failed writing {}", path.string()));
  return path;
}

DomainDataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error(fmt::format("cannot open dataset manifest {}", manifest_path.string()));
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(fmt::format("{}: {}", manifest_path.string(), e.what()));
  }
  if (manifest.value("format", "") != "udmt-dataset") {
    throw std::runtime_error(fmt::format("{}: not a dataset manifest", manifest_path.string()));
  }
  DomainDataset data;
  data.languages = manifest.at("languages").get<std::vector<std::string>>();
  if (data.languages.size() != 2) throw std::runtime_error("dataset manifest: exactly two languages required");
  const auto base = manifest_path.parent_path();
  for (const auto& name : manifest.at("domains")) data.domains[name.get<std::string>()];
  for (const auto& s : manifest.at("splits")) {
    const auto role = s.at("role").get<std::string>();
    const auto domain = s.at("domain").get<std::string>();
    const auto lang = s.at("language").get<std::string>();
    std::filesystem::path file = s.at("path").get<std::string>();
    if (file.is_relative()) file = base / file;
    auto lines = load_corpus(file, CorpusFormat::kLines).sentences;
    if (s.contains("lines") && s.at("lines").get<std::size_t>() != lines.size()) {
      throw std::runtime_error(fmt::format("{}: expected {} lines, found {}", file.string(),
                                           s.at("lines").get<std::size_t>(), lines.size()));
    }
    const bool is_src = lang == data.languages[0];
    if (!is_src && lang != data.languages[1]) {
      throw std::runtime_error(fmt::format("dataset manifest: unknown language '{}'", lang));
    }
    std::vector<std::string>* target = nullptr;
    if (domain == "general") {
      if (role == "parallel_train") target = is_src ? &data.general_train.source : &data.general_train.target;
      if (role == "parallel_dev") target = is_src ? &data.general_dev.source : &data.general_dev.target;
      if (role == "parallel_test") target = is_src ? &data.general_test.source : &data.general_test.target;
      if (role == "mono") target = is_src ? &data.general_mono_source : &data.general_mono_target;
    } else {
      auto it = data.domains.find(domain);
      if (it == data.domains.end()) {
        throw std::runtime_error(fmt::format("dataset manifest: split for undeclared domain '{}'", domain));
      }
      if (role == "mono") target = is_src ? &it->second.mono_source : &it->second.mono_target;
      if (role == "parallel_test") target = is_src ? &it->second.test.source : &it->second.test.target;
      if (role == "parallel_train" || role == "parallel_dev") {
        throw std::runtime_error(fmt::format("dataset manifest: in-domain parallel '{}' data for '{}' is not allowed",
                                             role, domain));
      }
    }
    if (!target) throw std::runtime_error(fmt::format("dataset manifest: unknown role '{}'", role));
    *target = std::move(lines);
  }
  auto check = [](const ParallelSet& p, const std::string& what) {
    if (p.source.size() != p.target.size()) {
      throw std::runtime_error(fmt::format("dataset: {} sides have {} and {} lines", what, p.source.size(), p.target.size()));
    }
  };
  check(data.general_train, "general train");
  check(data.general_dev, "general dev");
  check(data.general_test, "general test");
  for (const auto& [name, d] : data.domains) check(d.test, name + " test");
  return data;
}

}  // namespace udmt
