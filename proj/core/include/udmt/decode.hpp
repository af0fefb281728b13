#pragma once

#include <span>
#include <vector>

#include "udmt/model.hpp"

namespace udmt {

// Inference runs on a cached, tape-free path: the encoder once per source,
// then one decoder position per step with per-layer key/value caches.
// Decoders only emit eos or ids >= config.num_special_tokens; argmax ties
// go to the lower id. `max_len` bounds the number of decoding steps (the
// eos step included) and is clamped to max_seq_len. Outputs exclude bos and eos.

/// `src` is a full encoder input (tag, content, eos), unpadded.
std::vector<int> greedy_decode(const TransformerModel& model, std::span<const int> src, std::size_t max_len);

/// Greedy decoding of many sources at once; row i stops after max_lens[i] steps.
std::vector<std::vector<int>> greedy_decode_batch(const TransformerModel& model,
                                                  const std::vector<std::vector<int>>& srcs,
                                                  const std::vector<std::size_t>& max_lens);

struct BeamHypothesis {
  std::vector<int> tokens;
  /// Sum of token log-probabilities, eos included when emitted.
  double log_prob = 0.0;
  /// Number of decoding steps taken (tokens plus eos when emitted).
  std::size_t length = 0;
  bool finished = false;
  double normalized_score() const { return log_prob / static_cast<double>(length); }
};

/// Beam search ranked by length-normalized log-probability. beam == 1
/// reproduces greedy_decode exactly.
BeamHypothesis beam_decode(const TransformerModel& model, std::span<const int> src, std::size_t beam,
                           std::size_t max_len);

/// Per-step log-probabilities [steps, vocab] for forcing `dec_in` (starting
/// with bos) through the cached decoder.
std::vector<std::vector<double>> cached_decoder_log_probs(const TransformerModel& model, std::span<const int> src,
                                                          std::span<const int> dec_in);

}  // namespace udmt
