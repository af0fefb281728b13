#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "udmt/data_synth.hpp"
#include "udmt/rng.hpp"

using namespace udmt;

namespace {

SynthSizes small_sizes() {
  SynthSizes s;
  s.general_parallel = 300;
  s.general_dev = 20;
  s.general_mono = 200;
  s.domain_mono = 150;
  s.test = 40;
  return s;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST(Oracle, EmptyAndSingleToken) {
  SynthLang lang(SynthConfig{});
  EXPECT_TRUE(lang.oracle_translate({}).empty());
  auto one = lang.oracle_translate({"s5"});
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(lang.oracle_inverse(one), std::vector<std::string>{"s5"});
}

TEST(Oracle, ReordersWithinWindows) {
  SynthLang lang(SynthConfig{});
  auto a = lang.oracle_translate({"s1"})[0];
  auto b = lang.oracle_translate({"s2"})[0];
  auto c = lang.oracle_translate({"s3"})[0];
  EXPECT_EQ(lang.oracle_translate({"s1", "s2", "s3"}), (std::vector<std::string>{b, a, c}));
}

TEST(Oracle, InverseUndoesTranslation) {
  SynthLang lang(SynthConfig{});
  auto rng = substream(2, "inverse");
  for (int i = 0; i < 1000; ++i) {
    std::optional<std::size_t> dom;
    if (i % 3) dom = static_cast<std::size_t>(i % 2);
    auto s = lang.sample_source(rng, dom);
    EXPECT_EQ(lang.oracle_inverse(lang.oracle_translate(s)), s);
  }
}

TEST(Oracle, CipherIsPartitionPreservingBijection) {
  SynthLang lang(SynthConfig{});
  std::set<std::string> images;
  for (std::size_t id = 0; id < lang.num_tokens(); ++id) {
    auto s = SynthLang::source_token(id);
    auto t = lang.oracle_translate({s})[0];
    images.insert(t);
    EXPECT_EQ(lang.token_domain(s), lang.token_domain(t)) << s;
  }
  EXPECT_EQ(images.size(), lang.num_tokens());
}

TEST(Oracle, UnknownTokenIsAnError) {
  SynthLang lang(SynthConfig{});
  EXPECT_THROW(lang.oracle_translate({"s999"}), std::invalid_argument);
  EXPECT_THROW(lang.oracle_translate({"t1"}), std::invalid_argument);
  EXPECT_THROW(lang.oracle_translate({"bogus"}), std::invalid_argument);
}

TEST(GenDataset, SameSeedIsByteIdentical) {
  SynthLang lang(SynthConfig{});
  auto a = gen_dataset(lang, small_sizes());
  auto b = gen_dataset(lang, small_sizes());
  EXPECT_EQ(a.general_train.source, b.general_train.source);
  EXPECT_EQ(a.general_mono_target, b.general_mono_target);
  EXPECT_EQ(a.domain("A").mono_source, b.domain("A").mono_source);
  EXPECT_EQ(a.domain("B").test.target, b.domain("B").test.target);
  SynthConfig other;
  other.seed = 2;
  auto c = gen_dataset(SynthLang(other), small_sizes());
  EXPECT_NE(a.general_train.source, c.general_train.source);
}

TEST(GenDataset, GeneralCorporaHaveNoDomainTokens) {
  SynthLang lang(SynthConfig{});
  auto data = gen_dataset(lang, small_sizes());
  for (const auto* corpus : {&data.general_train.source, &data.general_train.target, &data.general_mono_source,
                             &data.general_mono_target, &data.general_test.source}) {
    for (const auto& line : *corpus) {
      for (const auto& t : split_tokens(line)) EXPECT_FALSE(lang.token_domain(t).has_value()) << t;
    }
  }
  for (const auto& line : data.domain("A").mono_source) {
    for (const auto& t : split_tokens(line)) {
      auto d = lang.token_domain(t);
      EXPECT_TRUE(!d || *d == 0) << t;
    }
  }
}

TEST(GenDataset, TestSplitsAreOracleTranslations) {
  SynthLang lang(SynthConfig{});
  auto data = gen_dataset(lang, small_sizes());
  const auto& t = data.domain("A").test;
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(join_tokens(lang.oracle_translate(split_tokens(t.source[i]))), t.target[i]);
  }
}

TEST(GenDataset, TestSplitsAreDisjointFromTrainingText) {
  SynthLang lang(SynthConfig{});
  auto data = gen_dataset(lang, small_sizes());
  std::set<std::string> src(data.general_train.source.begin(), data.general_train.source.end());
  std::set<std::string> tgt(data.general_train.target.begin(), data.general_train.target.end());
  src.insert(data.general_mono_source.begin(), data.general_mono_source.end());
  tgt.insert(data.general_mono_target.begin(), data.general_mono_target.end());
  for (const auto& [name, d] : data.domains) {
    src.insert(d.mono_source.begin(), d.mono_source.end());
    tgt.insert(d.mono_target.begin(), d.mono_target.end());
  }
  std::vector<const ParallelSet*> tests{&data.general_test};
  for (const auto& [name, d] : data.domains) tests.push_back(&d.test);
  for (const auto* t : tests) {
    ASSERT_EQ(t->size(), 40u);
    for (std::size_t i = 0; i < t->size(); ++i) {
      EXPECT_EQ(src.count(t->source[i]), 0u) << t->source[i];
      EXPECT_EQ(tgt.count(t->target[i]), 0u) << t->target[i];
    }
  }
}

TEST(GenDataset, ImpossibleDisjointTestSetThrows) {
  SynthConfig cfg;
  cfg.v_general = 10;
  cfg.v_domain = 10;
  cfg.min_len = 1;
  cfg.max_len = 1;
  SynthSizes sizes = small_sizes();
  EXPECT_THROW(gen_dataset(SynthLang(cfg), sizes), std::invalid_argument);
}

TEST(GenDataset, MonoSidesAreNotMutualTranslations) {
  SynthLang lang(SynthConfig{});
  auto data = gen_dataset(lang, small_sizes());
  std::size_t aligned = 0;
  const auto& d = data.domain("A");
  for (std::size_t i = 0; i < d.mono_source.size(); ++i) {
    aligned += join_tokens(lang.oracle_translate(split_tokens(d.mono_source[i]))) == d.mono_target[i];
  }
  EXPECT_LT(aligned, 3u);
}

TEST(GenDataset, GeneralUnigramFrequenciesWithinThreeSigma) {
  SynthConfig cfg;
  SynthLang lang(cfg);
  auto rng = substream(3, "freq");
  std::vector<double> counts(cfg.v_general, 0.0);
  double n = 0;
  for (int i = 0; i < 4000; ++i) {
    for (const auto& t : lang.sample_source(rng, std::nullopt)) {
      counts[std::stoul(t.substr(1))] += 1;
      n += 1;
    }
  }
  std::size_t outside = 0;
  for (std::size_t k = 0; k < cfg.v_general; ++k) {
    const double p = lang.general_weights()[k];
    if (std::abs(counts[k] / n - p) > 3.0 * std::sqrt(p * (1 - p) / n)) ++outside;
  }
  // 3 sigma per token: a handful of 160 may fall outside by chance.
  EXPECT_LE(outside, 4u);
}

TEST(GenDataset, DomainTokensFollowAnchorsAndMixture) {
  SynthConfig cfg;
  SynthLang lang(cfg);
  auto rng = substream(4, "domain-freq");
  std::vector<double> counts(cfg.v_domain, 0.0);
  double n = 0;
  for (int i = 0; i < 4000; ++i) {
    auto s = lang.sample_source(rng, 1);
    for (std::size_t j = 0; j < s.size(); ++j) {
      auto d = lang.token_domain(s[j]);
      if (!d) continue;
      ASSERT_EQ(*d, 1u);
      const auto k = std::stoul(s[j].substr(1)) - cfg.v_general - cfg.v_domain;
      ASSERT_GT(j, 0u);
      EXPECT_EQ(s[j - 1], SynthLang::source_token(lang.anchor(1, k)));
      counts[k] += 1;
      n += 1;
    }
  }
  std::size_t outside = 0;
  for (std::size_t k = 0; k < cfg.v_domain; ++k) {
    const double p = lang.domain_weights()[k];
    if (std::abs(counts[k] / n - p) > 3.0 * std::sqrt(p * (1 - p) / n)) ++outside;
  }
  EXPECT_LE(outside, 2u);
}

TEST(Corpus, EmptyAndSmallFiles) {
  auto dir = temp_dir("udmt_corpus_test");
  save_lines(dir / "empty.txt", {});
  EXPECT_TRUE(load_corpus(dir / "empty.txt", CorpusFormat::kLines).sentences.empty());
  {
    std::ofstream out(dir / "three.txt");
    out << "a b  \nc\t\nd e f\n";
  }
  auto c = load_corpus(dir / "three.txt", CorpusFormat::kLines);
  EXPECT_EQ(c.sentences, (std::vector<std::string>{"a b", "c", "d e f"}));
  std::filesystem::remove_all(dir);
}

TEST(Corpus, RejectsEmptyAndMalformedLinesWithLineNumber) {
  auto dir = temp_dir("udmt_corpus_bad");
  {
    std::ofstream out(dir / "gap.txt");
    out << "a\n\nb\n";
  }
  try {
    load_corpus(dir / "gap.txt", CorpusFormat::kLines);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  {
    std::ofstream out(dir / "pairs.tsv");
    out << "a\tb\nno tab here\n";
  }
  try {
    load_corpus(dir / "pairs.tsv", CorpusFormat::kTsvPairs);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  std::filesystem::remove_all(dir);
}

TEST(Corpus, SaveLoadRoundTrip) {
  auto dir = temp_dir("udmt_corpus_rt");
  std::vector<std::pair<std::string, std::string>> pairs = {{"s1 s2", "t2 t1"}, {"s3", "t3"}};
  save_tsv_pairs(dir / "p.tsv", pairs);
  EXPECT_EQ(load_corpus(dir / "p.tsv", CorpusFormat::kTsvPairs).pairs, pairs);
  std::vector<std::string> lines = {"x y", "z"};
  save_lines(dir / "l.txt", lines);
  EXPECT_EQ(load_corpus(dir / "l.txt", CorpusFormat::kLines).sentences, lines);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, ManifestRoundTrip) {
  auto dir = temp_dir("udmt_dataset_rt");
  SynthLang lang(SynthConfig{});
  auto data = gen_dataset(lang, small_sizes());
  auto manifest = save_dataset(data, dir, lang.config());
  auto back = load_dataset(manifest);
  EXPECT_EQ(back.general_train.source, data.general_train.source);
  EXPECT_EQ(back.general_train.target, data.general_train.target);
  EXPECT_EQ(back.general_mono_source, data.general_mono_source);
  ASSERT_EQ(back.domains.size(), 2u);
  EXPECT_EQ(back.domain("B").mono_target, data.domain("B").mono_target);
  EXPECT_EQ(back.domain("A").test.target, data.domain("A").test.target);
  std::filesystem::remove_all(dir);
}
