#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>

#include "udmt/decode.hpp"
#include "udmt/model.hpp"
#include "udmt/rng.hpp"
#include "udmt/special_tokens.hpp"

using namespace udmt;

namespace {

TransformerConfig small_config(std::size_t vocab = 24) {
  TransformerConfig c;
  c.num_layers = 2;
  c.d_model = 16;
  c.num_heads = 4;
  c.d_ff = 32;
  c.max_seq_len = 24;
  c.vocab_size = vocab;
  c.dropout_rate = 0.0;
  return c;
}

std::vector<int> random_sentence(std::mt19937_64& rng, const TransformerConfig& c, std::size_t len) {
  std::vector<int> s;
  for (std::size_t i = 0; i < len; ++i) {
    s.push_back(static_cast<int>(c.num_special_tokens + uniform_index(rng, c.vocab_size - c.num_special_tokens)));
  }
  return s;
}

std::vector<int> encoder_input(std::vector<int> content) {
  content.insert(content.begin(), kFirstLanguageTagId);
  content.push_back(kEosId);
  return content;
}

Tensor logits_of(const TransformerModel& m, const Seq2SeqBatch& b) {
  Tape tape;
  BoundParameters p(tape, m.params(), false);
  return forward_teacher_forced(m.config(), p, tape, b).value();
}

Seq2SeqBatch single(const std::vector<int>& src, const std::vector<int>& dec_in) {
  return Seq2SeqBatch::from_rows({src}, {dec_in}, {dec_in}, {std::vector<std::uint8_t>(dec_in.size(), 1)});
}

}  // namespace

TEST(Model, ParameterCountDependsOnConfigOnly) {
  auto c = small_config();
  TransformerModel a(c, 1), b(c, 2);
  EXPECT_EQ(parameter_count(a.params()), transformer_parameter_count(c));
  EXPECT_EQ(parameter_count(b.params()), transformer_parameter_count(c));
  EXPECT_EQ(a.params().count("embed"), 1u);
}

TEST(Model, RejectsHeadsNotDividingWidth) {
  auto c = small_config();
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Model, LogitsShapeMatchesBatch) {
  auto rng = substream(1, "shapes");
  for (int trial = 0; trial < 5; ++trial) {
    auto c = small_config(10 + trial * 3);
    TransformerModel m(c, static_cast<std::uint64_t>(trial));
    const auto B = 1 + uniform_index(rng, 3);
    std::vector<std::vector<int>> src, din;
    std::vector<std::vector<std::uint8_t>> mask;
    std::size_t tmax = 0;
    for (std::size_t i = 0; i < B; ++i) {
      src.push_back(encoder_input(random_sentence(rng, c, 1 + uniform_index(rng, 6))));
      auto d = random_sentence(rng, c, 1 + uniform_index(rng, 6));
      tmax = std::max(tmax, d.size());
      din.push_back(d);
      mask.emplace_back(d.size(), 1);
    }
    auto logits = logits_of(m, Seq2SeqBatch::from_rows(src, din, din, mask));
    EXPECT_EQ(logits.shape(), (Shape{B, tmax, c.vocab_size}));
  }
}

TEST(Model, DecoderIsCausal) {
  auto c = small_config();
  TransformerModel m(c, 3);
  auto rng = substream(3, "causal");
  auto src = encoder_input(random_sentence(rng, c, 5));
  auto din = random_sentence(rng, c, 7);
  din[0] = kBosId;
  const auto base = logits_of(m, single(src, din));
  for (std::size_t j = 1; j < din.size(); ++j) {
    auto changed = din;
    changed[j] = changed[j] == 5 ? 6 : 5;
    const auto other = logits_of(m, single(src, changed));
    for (std::size_t t = 0; t < din.size(); ++t) {
      bool same = true;
      for (std::size_t v = 0; v < c.vocab_size; ++v) same = same && base[t * c.vocab_size + v] == other[t * c.vocab_size + v];
      if (t < j) {
        EXPECT_TRUE(same) << "position " << t << " changed after perturbing " << j;
      } else if (t == j) {
        EXPECT_FALSE(same);
      }
    }
  }
}

TEST(Model, SourcePaddingIsInvisible) {
  auto c = small_config();
  TransformerModel m(c, 4);
  auto rng = substream(4, "pad");
  auto short_src = encoder_input(random_sentence(rng, c, 3));
  auto long_src = encoder_input(random_sentence(rng, c, 9));
  auto din = random_sentence(rng, c, 4);
  din[0] = kBosId;
  auto alone = logits_of(m, single(short_src, din));
  auto batched = logits_of(m, Seq2SeqBatch::from_rows({short_src, long_src}, {din, din}, {din, din},
                                                      {{1, 1, 1, 1}, {1, 1, 1, 1}}));
  for (std::size_t i = 0; i < alone.numel(); ++i) EXPECT_NEAR(alone[i], batched[i], 1e-9);
}

TEST(Model, TargetPaddingLeavesRealPositionsUnchanged) {
  auto c = small_config();
  TransformerModel m(c, 5);
  auto rng = substream(5, "tpad");
  auto src = encoder_input(random_sentence(rng, c, 4));
  std::vector<int> d1 = {kBosId, 7, 8};
  std::vector<int> d2 = {kBosId, 9, 10, 11, 12, 13};
  auto alone = logits_of(m, single(src, d1));
  auto batched = logits_of(m, Seq2SeqBatch::from_rows({src, src}, {d1, d2}, {d1, d2}, {{1, 1, 1}, {1, 1, 1, 1, 1, 1}}));
  for (std::size_t i = 0; i < alone.numel(); ++i) EXPECT_NEAR(alone[i], batched[i], 1e-9);
}

TEST(Model, OverlongSequenceIsAnError) {
  auto c = small_config();
  TransformerModel m(c, 6);
  std::vector<int> src(c.max_seq_len + 1, 5);
  EXPECT_THROW(logits_of(m, single(src, {kBosId})), std::length_error);
}

TEST(Model, SharedEmbeddingCollectsAllGradients) {
  auto c = small_config();
  TransformerModel m(c, 7);
  // Token 20 only appears as a target: its embedding row still gets gradient through the output projection.
  auto b = Seq2SeqBatch::from_rows({encoder_input({5, 6})}, {{kBosId, 7}}, {{20, kEosId}}, {{1, 1}});
  auto lg = loss_and_gradients(m, b);
  const auto& g = lg.grads.at("embed");
  double row = 0.0;
  for (std::size_t j = 0; j < c.d_model; ++j) row += std::abs(g[20 * c.d_model + j]);
  EXPECT_GT(row, 0.0);
}

TEST(Model, UniformLogitsGiveLogV) {
  auto c = small_config();
  TransformerModel m(c, 8);
  for (auto& v : m.params().at("embed").mutable_data()) v = 0.0;
  auto b = Seq2SeqBatch::from_rows({encoder_input({5, 6})}, {{kBosId, 7, 8}}, {{7, 8, kEosId}}, {{1, 1, 1}});
  EXPECT_NEAR(loss_and_gradients(m, b).loss, std::log(static_cast<double>(c.vocab_size)), 1e-12);
}

TEST(Decode, CachedDecoderMatchesTeacherForcing) {
  auto c = small_config();
  TransformerModel m(c, 9);
  auto rng = substream(9, "cache");
  for (int trial = 0; trial < 5; ++trial) {
    auto src = encoder_input(random_sentence(rng, c, 2 + uniform_index(rng, 6)));
    auto din = random_sentence(rng, c, 1 + uniform_index(rng, 7));
    din[0] = kBosId;
    auto logits = logits_of(m, single(src, din));
    auto cached = cached_decoder_log_probs(m, src, din);
    ASSERT_EQ(cached.size(), din.size());
    for (std::size_t t = 0; t < din.size(); ++t) {
      double mx = -1e300, z = 0.0;
      for (std::size_t v = 0; v < c.vocab_size; ++v) mx = std::max(mx, logits[t * c.vocab_size + v]);
      for (std::size_t v = 0; v < c.vocab_size; ++v) z += std::exp(logits[t * c.vocab_size + v] - mx);
      for (std::size_t v = 0; v < c.vocab_size; ++v) {
        EXPECT_NEAR(cached[t][v], logits[t * c.vocab_size + v] - mx - std::log(z), 1e-10);
      }
    }
  }
}

TEST(Decode, GreedyTerminatesOnEmptySource) {
  auto c = small_config();
  TransformerModel m(c, 10);
  std::vector<int> src = {kFirstLanguageTagId, kEosId};
  auto out = greedy_decode(m, src, 6);
  EXPECT_LE(out.size(), 6u);
  for (int id : out) EXPECT_GE(id, static_cast<int>(c.num_special_tokens));
}

TEST(Decode, GreedyBreaksTiesTowardLowerId) {
  auto c = small_config();
  TransformerModel m(c, 11);
  // Identical embedding rows for 9 and 10 give identical logits; greedy must never pick 10.
  auto& e = m.params().at("embed");
  auto data = e.mutable_data();
  for (std::size_t j = 0; j < c.d_model; ++j) data[10 * c.d_model + j] = data[9 * c.d_model + j];
  auto rng = substream(11, "ties");
  for (int trial = 0; trial < 20; ++trial) {
    auto out = greedy_decode(m, encoder_input(random_sentence(rng, c, 4)), 8);
    for (int id : out) EXPECT_NE(id, 10);
  }
}

TEST(Decode, BatchedGreedyMatchesSingle) {
  auto c = small_config();
  TransformerModel m(c, 12);
  auto rng = substream(12, "batch");
  std::vector<std::vector<int>> srcs;
  std::vector<std::size_t> lens;
  for (int i = 0; i < 8; ++i) {
    srcs.push_back(encoder_input(random_sentence(rng, c, 1 + uniform_index(rng, 8))));
    lens.push_back(3 + uniform_index(rng, 8));
  }
  auto batched = greedy_decode_batch(m, srcs, lens);
  for (std::size_t i = 0; i < srcs.size(); ++i) EXPECT_EQ(batched[i], greedy_decode(m, srcs[i], lens[i]));
}

TEST(Decode, BeamOneEqualsGreedy) {
  auto c = small_config();
  TransformerModel m(c, 13);
  auto rng = substream(13, "beam1");
  for (int trial = 0; trial < 50; ++trial) {
    auto src = encoder_input(random_sentence(rng, c, 1 + uniform_index(rng, 8)));
    EXPECT_EQ(beam_decode(m, src, 1, 10).tokens, greedy_decode(m, src, 10)) << "input " << trial;
  }
}

TEST(Decode, BeamBelowOneIsAnError) {
  auto c = small_config();
  TransformerModel m(c, 14);
  std::vector<int> src = {kFirstLanguageTagId, 5, kEosId};
  EXPECT_THROW(beam_decode(m, src, 0, 5), std::invalid_argument);
}

namespace {

struct Scored {
  std::vector<int> tokens;
  double log_prob;
  std::size_t length;
};

// Every hypothesis a decoder limited to max_len steps can produce: k < max_len
// emitted tokens followed by eos, or max_len tokens with no eos.
std::vector<Scored> enumerate_all(const TransformerModel& m, const std::vector<int>& src, std::size_t max_len) {
  const auto& c = m.config();
  std::vector<int> symbols;
  for (std::size_t v = c.num_special_tokens; v < c.vocab_size; ++v) symbols.push_back(static_cast<int>(v));
  std::vector<Scored> out;
  std::function<void(std::vector<int>&)> rec = [&](std::vector<int>& prefix) {
    std::vector<int> din = {kBosId};
    din.insert(din.end(), prefix.begin(), prefix.end());
    auto lp = cached_decoder_log_probs(m, src, din);
    double sum = 0.0;
    for (std::size_t t = 0; t < prefix.size(); ++t) sum += lp[t][static_cast<std::size_t>(prefix[t])];
    if (prefix.size() == max_len) {
      out.push_back({prefix, sum, max_len});
      return;
    }
    out.push_back({prefix, sum + lp[prefix.size()][kEosId], prefix.size() + 1});
    for (int s : symbols) {
      prefix.push_back(s);
      rec(prefix);
      prefix.pop_back();
    }
  };
  std::vector<int> empty;
  rec(empty);
  return out;
}

}  // namespace

TEST(Decode, ExhaustiveBeamEqualsBruteForce) {
  // Five emittable symbols: eos plus ids 4..7.
  auto c = small_config(8);
  c.d_model = 8;
  c.num_heads = 2;
  c.d_ff = 16;
  TransformerModel m(c, 15);
  auto rng = substream(15, "exhaustive");
  const std::size_t max_len = 4;
  for (int trial = 0; trial < 6; ++trial) {
    auto src = encoder_input(random_sentence(rng, c, 1 + uniform_index(rng, 4)));
    auto all = enumerate_all(m, src, max_len);
    const Scored* best = &all.front();
    for (const auto& s : all) {
      if (s.log_prob / static_cast<double>(s.length) > best->log_prob / static_cast<double>(best->length)) best = &s;
    }
    auto beam = beam_decode(m, src, 625, max_len);
    EXPECT_EQ(beam.tokens, best->tokens) << "input " << trial;
    EXPECT_NEAR(beam.normalized_score(), best->log_prob / static_cast<double>(best->length), 1e-12);
    auto narrow = beam_decode(m, src, 4, max_len);
    EXPECT_GE(beam.normalized_score(), narrow.normalized_score() - 1e-12);
  }
}

TEST(Decode, WiderBeamScoresAtLeastGreedyOnToyModel) {
  auto c = small_config(8);
  c.d_model = 8;
  c.num_heads = 2;
  c.d_ff = 16;
  TransformerModel m(c, 16);
  auto rng = substream(16, "wider");
  for (int trial = 0; trial < 20; ++trial) {
    auto src = encoder_input(random_sentence(rng, c, 1 + uniform_index(rng, 4)));
    auto b1 = beam_decode(m, src, 1, 4);
    auto b4 = beam_decode(m, src, 4, 4);
    EXPECT_GE(b4.normalized_score(), b1.normalized_score() - 1e-12) << "input " << trial;
  }
}

TEST(Model, SaveLoadRoundTripsAndValidatesConfig) {
  auto c = small_config();
  TransformerModel m(c, 17);
  auto path = std::filesystem::temp_directory_path() / "udmt_model_roundtrip.bin";
  save_model(m, path.string(), {{"stage", "2"}});
  auto back = load_model(path.string(), &c);
  EXPECT_EQ(back.config(), c);
  for (const auto& [name, t] : m.params()) EXPECT_TRUE(back.params().at(name).bit_equal(t)) << name;
  auto src = encoder_input({5, 6, 7});
  std::vector<int> din = {kBosId, 8, 9};
  EXPECT_TRUE(logits_of(m, single(src, din)).bit_equal(logits_of(back, single(src, din))));
  auto other = c;
  other.d_model = 32;
  EXPECT_THROW(load_model(path.string(), &other), std::runtime_error);
  std::filesystem::remove(path);
}
