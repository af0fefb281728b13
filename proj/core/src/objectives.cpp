#include "udmt/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

#include "udmt/decode.hpp"
#include "udmt/rng.hpp"
#include "udmt/special_tokens.hpp"

namespace udmt {

namespace {

std::span<const int> content_of(std::span<const int> ids) {
  if (!ids.empty() && ids.back() == kEosId) return ids.first(ids.size() - 1);
  return ids;
}

void require_eos(const std::vector<int>& s, const char* what, std::size_t row) {
  if (s.empty() || s.back() != kEosId) throw std::invalid_argument(fmt::format("{} {} does not end with eos", what, row));
}

}  // namespace

std::vector<int> MassExample::aligned_target() const {
  std::vector<int> out(decoder_input.size(), kPadId);
  for (std::size_t i = 0; i < span_len; ++i) out[span_start + i] = decoder_target[i];
  return out;
}

MassExample mask_span(std::span<const int> ids, double mask_fraction, std::mt19937_64& rng) {
  if (!(mask_fraction > 0.0 && mask_fraction <= 1.0)) {
    throw std::invalid_argument(fmt::format("mask_span: fraction {} not in (0, 1]", mask_fraction));
  }
  const auto content = content_of(ids);
  const auto n = content.size();
  if (n == 0) throw std::invalid_argument("mask_span: empty content");
  MassExample ex;
  ex.span_len = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(mask_fraction * static_cast<double>(n))));
  ex.span_len = std::min(ex.span_len, n);
  ex.span_start = uniform_index(rng, n - ex.span_len + 1);
  ex.encoder_input.assign(content.begin(), content.end());
  ex.decoder_input.assign(n, kMaskId);
  ex.loss_mask.assign(n, 0);
  for (std::size_t j = ex.span_start; j < ex.span_start + ex.span_len; ++j) {
    ex.encoder_input[j] = kMaskId;
    ex.decoder_input[j] = j == ex.span_start ? kMaskId : content[j - 1];
    ex.decoder_target.push_back(content[j]);
    ex.loss_mask[j] = 1;
  }
  return ex;
}

Seq2SeqBatch mass_batch(const std::vector<MassExample>& examples, int language_tag) {
  if (examples.empty()) throw std::invalid_argument("mass_batch: empty batch");
  std::vector<std::vector<int>> src, din, tgt;
  std::vector<std::vector<std::uint8_t>> mask;
  for (const auto& ex : examples) {
    std::vector<int> s = {language_tag};
    s.insert(s.end(), ex.encoder_input.begin(), ex.encoder_input.end());
    s.push_back(kEosId);
    src.push_back(std::move(s));
    din.push_back(ex.decoder_input);
    tgt.push_back(ex.aligned_target());
    mask.push_back(ex.loss_mask);
  }
  return Seq2SeqBatch::from_rows(src, din, tgt, mask);
}

Seq2SeqBatch supervised_batch(const std::vector<std::vector<int>>& sources, const std::vector<std::vector<int>>& targets,
                              int target_tag) {
  if (sources.size() != targets.size()) {
    throw std::invalid_argument(
        fmt::format("supervised batch: {} sources but {} targets", sources.size(), targets.size()));
  }
  if (sources.empty()) throw std::invalid_argument("supervised batch: empty batch");
  std::vector<std::vector<int>> src, din, tgt;
  std::vector<std::vector<std::uint8_t>> mask;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    require_eos(sources[i], "source", i);
    require_eos(targets[i], "target", i);
    std::vector<int> s = {target_tag};
    s.insert(s.end(), sources[i].begin(), sources[i].end());
    src.push_back(std::move(s));
    std::vector<int> d = {kBosId};
    d.insert(d.end(), targets[i].begin(), targets[i].end() - 1);
    din.push_back(std::move(d));
    tgt.push_back(targets[i]);
    mask.emplace_back(targets[i].size(), 1);
  }
  return Seq2SeqBatch::from_rows(src, din, tgt, mask);
}

Var mass_loss(const TransformerConfig& config, const BoundParameters& params, Tape& tape,
              const std::vector<MassExample>& examples, int language_tag, const ForwardOptions& options) {
  return sequence_loss(config, params, tape, mass_batch(examples, language_tag), options);
}

Var supervised_loss(const TransformerConfig& config, const BoundParameters& params, Tape& tape,
                    const std::vector<std::vector<int>>& sources, const std::vector<std::vector<int>>& targets,
                    int target_tag, const ForwardOptions& options) {
  return sequence_loss(config, params, tape, supervised_batch(sources, targets, target_tag), options);
}

std::vector<PseudoPair> backtranslate_batch(const TransformerModel& model, const std::vector<std::vector<int>>& mono,
                                            int source_tag, std::size_t beam, std::uint64_t model_step) {
  if (beam < 1) throw std::invalid_argument("backtranslate_batch: beam must be >= 1");
  const auto& c = model.config();
  std::vector<std::vector<int>> inputs;
  std::vector<std::size_t> limits;
  for (std::size_t i = 0; i < mono.size(); ++i) {
    require_eos(mono[i], "monolingual sentence", i);
    std::vector<int> s = {source_tag};
    s.insert(s.end(), mono[i].begin(), mono[i].end());
    inputs.push_back(std::move(s));
    const auto content = mono[i].size() - 1;
    // Room for the tag and eos when the output becomes an encoder input.
    limits.push_back(std::min(2 * content + 4, c.max_seq_len - 2));
  }
  std::vector<std::vector<int>> decoded;
  if (beam == 1) {
    decoded = greedy_decode_batch(model, inputs, limits);
  } else {
    for (std::size_t i = 0; i < inputs.size(); ++i) decoded.push_back(beam_decode(model, inputs[i], beam, limits[i]).tokens);
  }
  std::vector<PseudoPair> pairs;
  for (std::size_t i = 0; i < mono.size(); ++i) {
    PseudoPair p;
    p.pseudo_source = std::move(decoded[i]);
    p.pseudo_source.push_back(kEosId);
    p.true_target = mono[i];
    p.beam = beam;
    p.model_step = model_step;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

Var bt_loss(const TransformerConfig& config, const BoundParameters& params, Tape& tape,
            const std::vector<PseudoPair>& pairs, int target_tag, const ForwardOptions& options) {
  std::vector<std::vector<int>> src, tgt;
  for (const auto& p : pairs) {
    src.push_back(p.pseudo_source);
    tgt.push_back(p.true_target);
  }
  return supervised_loss(config, params, tape, src, tgt, target_tag, options);
}

}  // namespace udmt
