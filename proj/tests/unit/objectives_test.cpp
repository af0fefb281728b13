#include <gtest/gtest.h>

#include <cmath>

#include "udmt/decode.hpp"
#include "udmt/objectives.hpp"
#include "udmt/ops.hpp"
#include "udmt/rng.hpp"
#include "udmt/special_tokens.hpp"

using namespace udmt;

namespace {

constexpr int kTag = kFirstLanguageTagId;

TransformerConfig small_config() {
  TransformerConfig c;
  c.num_layers = 1;
  c.d_model = 16;
  c.num_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 32;
  c.vocab_size = 20;
  c.num_special_tokens = 6;
  c.dropout_rate = 0.0;
  return c;
}

std::vector<int> random_sentence(std::mt19937_64& rng, const TransformerConfig& c, std::size_t len) {
  std::vector<int> s;
  for (std::size_t i = 0; i < len; ++i) {
    s.push_back(static_cast<int>(c.num_special_tokens + uniform_index(rng, c.vocab_size - c.num_special_tokens)));
  }
  s.push_back(kEosId);
  return s;
}

// Draws until the span starts at `start`; every start is reachable.
MassExample mask_at(const std::vector<int>& ids, double fraction, std::size_t start) {
  auto rng = substream(1, "mask-at");
  for (int i = 0; i < 1000; ++i) {
    auto ex = mask_span(ids, fraction, rng);
    if (ex.span_start == start) return ex;
  }
  throw std::runtime_error("span start never drawn");
}

TransformerModel zero_model(const TransformerConfig& c) {
  TransformerModel m(c, 3);
  for (auto& [name, t] : m.params()) {
    for (auto& v : t.mutable_data()) v = 0.0;
  }
  return m;
}

double max_abs_diff(const NamedGradients& a, const NamedGradients& b) {
  double d = 0;
  for (const auto& [name, t] : a) {
    const auto& u = b.at(name);
    for (std::size_t i = 0; i < t.numel(); ++i) d = std::max(d, std::abs(t.data()[i] - u.data()[i]));
  }
  return d;
}

}  // namespace

TEST(MaskSpan, SingleTokenIsMasked) {
  auto rng = substream(1, "single");
  auto ex = mask_span(std::vector<int>{7, kEosId}, 0.5, rng);
  EXPECT_EQ(ex.span_len, 1u);
  EXPECT_EQ(ex.span_start, 0u);
  EXPECT_EQ(ex.encoder_input, std::vector<int>{kMaskId});
  EXPECT_EQ(ex.decoder_target, std::vector<int>{7});
  EXPECT_EQ(ex.decoder_input, std::vector<int>{kMaskId});
}

TEST(MaskSpan, HandExampleStartingAtOne) {
  const int a = 10, b = 11, c = 12, d = 13;
  auto ex = mask_at({a, b, c, d, kEosId}, 0.5, 1);
  EXPECT_EQ(ex.span_len, 2u);
  EXPECT_EQ(ex.encoder_input, (std::vector<int>{a, kMaskId, kMaskId, d}));
  EXPECT_EQ(ex.decoder_target, (std::vector<int>{b, c}));
  EXPECT_EQ(ex.decoder_input, (std::vector<int>{kMaskId, kMaskId, b, kMaskId}));
  EXPECT_EQ(ex.loss_mask, (std::vector<std::uint8_t>{0, 1, 1, 0}));
  EXPECT_EQ(ex.aligned_target(), (std::vector<int>{kPadId, b, c, kPadId}));
}

TEST(MaskSpan, FullFractionMasksEverything) {
  auto rng = substream(1, "full");
  auto ex = mask_span(std::vector<int>{5, 6, 7, kEosId}, 1.0, rng);
  EXPECT_EQ(ex.encoder_input, (std::vector<int>{kMaskId, kMaskId, kMaskId}));
  EXPECT_EQ(ex.decoder_target, (std::vector<int>{5, 6, 7}));
  EXPECT_EQ(ex.decoder_input, (std::vector<int>{kMaskId, 5, 6}));
}

TEST(MaskSpan, RejectsEmptyContentAndBadFraction) {
  auto rng = substream(1, "errors");
  EXPECT_THROW(mask_span(std::vector<int>{kEosId}, 0.5, rng), std::invalid_argument);
  EXPECT_THROW(mask_span(std::vector<int>{}, 0.5, rng), std::invalid_argument);
  EXPECT_THROW(mask_span(std::vector<int>{5}, 0.0, rng), std::invalid_argument);
  EXPECT_THROW(mask_span(std::vector<int>{5}, 1.5, rng), std::invalid_argument);
}

TEST(MaskSpan, ReconstructsOriginalForRandomInputs) {
  auto c = small_config();
  auto rng = substream(2, "reconstruct");
  std::vector<std::size_t> start_hits(16, 0);
  for (int i = 0; i < 2000; ++i) {
    const auto len = 1 + uniform_index(rng, 15);
    auto ids = random_sentence(rng, c, len);
    const double fraction = 0.05 + 0.95 * uniform01(rng);
    auto ex = mask_span(ids, fraction, rng);
    ASSERT_EQ(ex.span_len, std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * len))));
    ASSERT_LE(ex.span_start + ex.span_len, len);
    std::size_t marked = 0;
    auto rebuilt = ex.encoder_input;
    for (std::size_t j = 0; j < len; ++j) {
      const bool in_span = j >= ex.span_start && j < ex.span_start + ex.span_len;
      ASSERT_EQ(ex.loss_mask[j], in_span ? 1 : 0);
      marked += ex.loss_mask[j];
      if (in_span) {
        ASSERT_EQ(ex.encoder_input[j], kMaskId);
        rebuilt[j] = ex.decoder_target[j - ex.span_start];
      } else {
        ASSERT_EQ(ex.encoder_input[j], ids[j]);
      }
    }
    ASSERT_EQ(marked, ex.span_len);
    ASSERT_EQ(rebuilt, std::vector<int>(ids.begin(), ids.end() - 1));
    if (len == 8 && ex.span_len == 4) ++start_hits[ex.span_start];
  }
  // Every valid start of a length-4 span over 8 tokens is drawn.
  for (std::size_t s = 0; s <= 4; ++s) EXPECT_GT(start_hits[s], 0u) << s;
}

TEST(MassLoss, UniformModelGivesLogVocab) {
  auto c = small_config();
  auto m = zero_model(c);
  auto rng = substream(3, "uniform");
  std::vector<MassExample> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(mask_span(random_sentence(rng, c, 3 + i), 0.5, rng));
  Tape tape;
  BoundParameters p(tape, m.params(), false);
  EXPECT_NEAR(mass_loss(c, p, tape, batch, kTag).value().item(), std::log(static_cast<double>(c.vocab_size)), 1e-12);
}

TEST(MassLoss, LogitGradientIsExactlyZeroOutsideSpans) {
  auto c = small_config();
  TransformerModel m(c, 4);
  auto rng = substream(4, "mass-grad");
  std::vector<MassExample> examples;
  for (int i = 0; i < 5; ++i) examples.push_back(mask_span(random_sentence(rng, c, 2 + 2 * i), 0.5, rng));
  auto batch = mass_batch(examples, kTag);

  Tape tape;
  BoundParameters p(tape, m.params(), false);
  const Tensor logits = forward_teacher_forced(c, p, tape, batch).value();
  Tape head;
  auto leaf = head.leaf(Tensor(Shape{batch.batch * batch.tgt_len, c.vocab_size},
                              std::vector<double>(logits.data().begin(), logits.data().end())));
  auto loss = ops::cross_entropy_masked(leaf, batch.dec_target, batch.loss_mask);
  const auto grads = head.backward(loss);
  const auto& g = grads.at(leaf.id());

  std::size_t zero_rows = 0, live_rows = 0;
  for (std::size_t r = 0; r < batch.batch * batch.tgt_len; ++r) {
    double row_abs = 0;
    for (std::size_t v = 0; v < c.vocab_size; ++v) row_abs += std::abs(g.data()[r * c.vocab_size + v]);
    if (batch.loss_mask[r]) {
      EXPECT_GT(row_abs, 0.0) << r;
      ++live_rows;
    } else {
      EXPECT_EQ(row_abs, 0.0) << r;
      ++zero_rows;
    }
  }
  EXPECT_GT(zero_rows, 0u);
  EXPECT_GT(live_rows, 0u);
}

TEST(MassLoss, ChangingNonSpanTargetsDoesNotChangeLossOrGradients) {
  auto c = small_config();
  TransformerModel m(c, 5);
  auto rng = substream(5, "mass-targets");
  std::vector<MassExample> examples;
  for (int i = 0; i < 3; ++i) examples.push_back(mask_span(random_sentence(rng, c, 6), 0.5, rng));
  auto batch = mass_batch(examples, kTag);
  auto other = batch;
  for (std::size_t i = 0; i < other.dec_target.size(); ++i) {
    if (!other.loss_mask[i]) other.dec_target[i] = static_cast<int>(c.vocab_size) - 1;
  }
  auto a = loss_and_gradients(m, batch);
  auto b = loss_and_gradients(m, other);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(max_abs_diff(a.grads, b.grads), 0.0);
}

TEST(MassLoss, FullFractionMatchesTeacherForcedReconstruction) {
  auto c = small_config();
  TransformerModel m(c, 6);
  auto rng = substream(6, "mass-full");
  std::vector<MassExample> examples;
  std::vector<std::vector<int>> src, din, tgt;
  std::vector<std::vector<std::uint8_t>> mask;
  for (int i = 0; i < 4; ++i) {
    auto ids = random_sentence(rng, c, 3 + i);
    examples.push_back(mask_span(ids, 1.0, rng));
    const std::vector<int> content(ids.begin(), ids.end() - 1);
    std::vector<int> s = {kTag};
    s.insert(s.end(), content.size(), kMaskId);
    s.push_back(kEosId);
    std::vector<int> d = {kMaskId};
    d.insert(d.end(), content.begin(), content.end() - 1);
    src.push_back(s);
    din.push_back(d);
    tgt.push_back(content);
    mask.emplace_back(content.size(), 1);
  }
  Tape t1, t2;
  BoundParameters p1(t1, m.params(), false), p2(t2, m.params(), false);
  const double mass = mass_loss(c, p1, t1, examples, kTag).value().item();
  const double full = sequence_loss(c, p2, t2, Seq2SeqBatch::from_rows(src, din, tgt, mask)).value().item();
  EXPECT_EQ(mass, full);
}

TEST(SupervisedLoss, UniformModelGivesLogVocab) {
  auto c = small_config();
  auto m = zero_model(c);
  auto rng = substream(7, "sup-uniform");
  std::vector<std::vector<int>> srcs, tgts;
  for (int i = 0; i < 3; ++i) {
    srcs.push_back(random_sentence(rng, c, 2 + i));
    tgts.push_back(random_sentence(rng, c, 5 - i));
  }
  Tape tape;
  BoundParameters p(tape, m.params(), false);
  EXPECT_NEAR(supervised_loss(c, p, tape, srcs, tgts, kTag).value().item(), std::log(static_cast<double>(c.vocab_size)),
              1e-12);
}

TEST(SupervisedLoss, BatchLayoutAndPadding) {
  auto b = supervised_batch({{7, 8, kEosId}, {9, kEosId}}, {{10, kEosId}, {11, 12, 13, kEosId}}, kTag);
  EXPECT_EQ(b.src_len, 4u);
  EXPECT_EQ(b.tgt_len, 4u);
  EXPECT_EQ(std::vector<int>(b.src.begin(), b.src.begin() + 4), (std::vector<int>{kTag, 7, 8, kEosId}));
  EXPECT_EQ(std::vector<int>(b.dec_in.begin(), b.dec_in.begin() + 4), (std::vector<int>{kBosId, 10, kPadId, kPadId}));
  EXPECT_EQ(std::vector<int>(b.dec_in.begin() + 4, b.dec_in.end()), (std::vector<int>{kBosId, 11, 12, 13}));
  EXPECT_EQ(std::vector<std::uint8_t>(b.loss_mask.begin(), b.loss_mask.begin() + 4),
            (std::vector<std::uint8_t>{1, 1, 0, 0}));
}

TEST(SupervisedLoss, PadPositionsDoNotMatter) {
  auto c = small_config();
  TransformerModel m(c, 8);
  auto b = supervised_batch({{7, 8, kEosId}, {9, kEosId}}, {{10, kEosId}, {11, 12, 13, kEosId}}, kTag);
  auto a = loss_and_gradients(m, b);
  auto alone = loss_and_gradients(m, supervised_batch({{7, 8, kEosId}}, {{10, kEosId}}, kTag));
  auto other = loss_and_gradients(m, supervised_batch({{9, kEosId}}, {{11, 12, 13, kEosId}}, kTag));
  // Token-mean over 2 + 4 scored positions.
  EXPECT_NEAR(a.loss, (2 * alone.loss + 4 * other.loss) / 6.0, 1e-12);
}

TEST(SupervisedLoss, RejectsMisalignedBatches) {
  EXPECT_THROW(supervised_batch({{7, kEosId}}, {}, kTag), std::invalid_argument);
  EXPECT_THROW(supervised_batch({}, {}, kTag), std::invalid_argument);
  EXPECT_THROW(supervised_batch({{7}}, {{8, kEosId}}, kTag), std::invalid_argument);
}

TEST(BackTranslation, KeepsTargetsAndEmitsValidIds) {
  auto c = small_config();
  TransformerModel m(c, 9);
  auto rng = substream(9, "bt");
  std::vector<std::vector<int>> mono;
  for (int i = 0; i < 12; ++i) mono.push_back(random_sentence(rng, c, 1 + uniform_index(rng, 10)));
  for (std::size_t beam : {std::size_t{1}, std::size_t{3}}) {
    auto pairs = backtranslate_batch(m, mono, kTag + 1, beam, 17);
    ASSERT_EQ(pairs.size(), mono.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      EXPECT_EQ(pairs[i].true_target, mono[i]);
      EXPECT_EQ(pairs[i].beam, beam);
      EXPECT_EQ(pairs[i].model_step, 17u);
      const auto& s = pairs[i].pseudo_source;
      ASSERT_FALSE(s.empty());
      EXPECT_EQ(s.back(), kEosId);
      EXPECT_LE(s.size() + 1, c.max_seq_len);
      for (std::size_t k = 0; k + 1 < s.size(); ++k) {
        EXPECT_GE(s[k], static_cast<int>(c.num_special_tokens));
        EXPECT_LT(s[k], static_cast<int>(c.vocab_size));
      }
    }
  }
}

TEST(BackTranslation, GreedyOutputMatchesSingleSentenceDecode) {
  auto c = small_config();
  TransformerModel m(c, 10);
  auto rng = substream(10, "bt-greedy");
  std::vector<std::vector<int>> mono;
  for (int i = 0; i < 5; ++i) mono.push_back(random_sentence(rng, c, 2 + i));
  auto pairs = backtranslate_batch(m, mono, kTag + 1, 1);
  for (std::size_t i = 0; i < mono.size(); ++i) {
    std::vector<int> src = {kTag + 1};
    src.insert(src.end(), mono[i].begin(), mono[i].end());
    auto expect = greedy_decode(m, src, 2 * (mono[i].size() - 1) + 4);
    expect.push_back(kEosId);
    EXPECT_EQ(pairs[i].pseudo_source, expect);
  }
}

TEST(BackTranslation, LossEqualsSupervisedLossOnPseudoPairs) {
  auto c = small_config();
  TransformerModel m(c, 11);
  auto rng = substream(11, "bt-loss");
  std::vector<std::vector<int>> mono;
  for (int i = 0; i < 4; ++i) mono.push_back(random_sentence(rng, c, 3 + i));
  auto pairs = backtranslate_batch(m, mono, kTag + 1, 1);
  std::vector<std::vector<int>> srcs;
  for (const auto& p : pairs) srcs.push_back(p.pseudo_source);
  Tape t1, t2;
  BoundParameters p1(t1, m.params(), false), p2(t2, m.params(), false);
  EXPECT_EQ(bt_loss(c, p1, t1, pairs, kTag).value().item(),
            supervised_loss(c, p2, t2, srcs, mono, kTag).value().item());
}

TEST(BackTranslation, UniformModelGivesLogVocab) {
  auto c = small_config();
  auto m = zero_model(c);
  auto rng = substream(12, "bt-uniform");
  std::vector<std::vector<int>> mono;
  for (int i = 0; i < 3; ++i) mono.push_back(random_sentence(rng, c, 4));
  auto pairs = backtranslate_batch(m, mono, kTag + 1, 1);
  Tape tape;
  BoundParameters p(tape, m.params(), false);
  EXPECT_NEAR(bt_loss(c, p, tape, pairs, kTag).value().item(), std::log(static_cast<double>(c.vocab_size)), 1e-12);
}

TEST(BackTranslation, NoGradientThroughGeneration) {
  auto c = small_config();
  TransformerModel live(c, 13);
  const TransformerModel frozen(c, live.params());
  auto rng = substream(13, "bt-nograd");
  std::vector<std::vector<int>> mono;
  for (int i = 0; i < 6; ++i) mono.push_back(random_sentence(rng, c, 2 + i));
  auto from_live = backtranslate_batch(live, mono, kTag + 1, 1);
  auto replayed = backtranslate_batch(frozen, mono, kTag + 1, 1);
  for (std::size_t i = 0; i < mono.size(); ++i) ASSERT_EQ(from_live[i].pseudo_source, replayed[i].pseudo_source);

  auto grads_of = [&](const TransformerModel& model, const std::vector<PseudoPair>& pairs) {
    Tape tape;
    BoundParameters p(tape, model.params());
    auto loss = bt_loss(c, p, tape, pairs, kTag);
    return p.named(tape.backward(loss));
  };
  const auto a = grads_of(live, from_live);
  const auto b = grads_of(live, replayed);
  EXPECT_EQ(max_abs_diff(a, b), 0.0);
}
