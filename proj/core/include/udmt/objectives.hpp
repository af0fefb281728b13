#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "udmt/model.hpp"

namespace udmt {

// Sentences are token-id encodings without a language tag: content ids
// followed by eos, as produced by Tokenizer::encode(text).

/// One masked-span reconstruction example over a sentence's content ids.
/// The decoder runs over every content position: outside the span its input
/// is mask_id and nothing is scored; inside, its input is mask_id followed by
/// the span shifted right by one, and it must predict the span.
struct MassExample {
  std::vector<int> encoder_input;
  std::vector<int> decoder_input;
  /// The masked span, span_len tokens.
  std::vector<int> decoder_target;
  std::vector<std::uint8_t> loss_mask;
  std::size_t span_start = 0;
  std::size_t span_len = 0;

  /// decoder_target placed at its content positions, pad elsewhere.
  std::vector<int> aligned_target() const;
};

/// span_len = max(1, round(fraction * n)) over the n content ids (a trailing
/// eos is ignored); span_start is uniform over the n - span_len + 1 starts.
MassExample mask_span(std::span<const int> ids, double mask_fraction, std::mt19937_64& rng);

/// Encoder rows are [language_tag] + encoder_input + [eos].
Seq2SeqBatch mass_batch(const std::vector<MassExample>& examples, int language_tag);

/// Teacher-forced translation batch: encoder [target_tag] + source, decoder
/// [bos] + target content, scored on every target id including eos.
Seq2SeqBatch supervised_batch(const std::vector<std::vector<int>>& sources, const std::vector<std::vector<int>>& targets,
                              int target_tag);

Var mass_loss(const TransformerConfig& config, const BoundParameters& params, Tape& tape,
              const std::vector<MassExample>& examples, int language_tag, const ForwardOptions& options = {});

Var supervised_loss(const TransformerConfig& config, const BoundParameters& params, Tape& tape,
                    const std::vector<std::vector<int>>& sources, const std::vector<std::vector<int>>& targets,
                    int target_tag, const ForwardOptions& options = {});

/// A model-generated source for a real monolingual sentence.
struct PseudoPair {
  /// Decoded ids followed by eos.
  std::vector<int> pseudo_source;
  /// The monolingual input, untouched.
  std::vector<int> true_target;
  std::size_t beam = 1;
  std::uint64_t model_step = 0;
};

/// Translates each monolingual sentence into the language tagged by
/// `source_tag` with the tape-free decoder (greedy when beam == 1); no
/// gradient can reach the generation. Output length is capped at
/// 2 * content + 4 tokens and by max_seq_len.
std::vector<PseudoPair> backtranslate_batch(const TransformerModel& model, const std::vector<std::vector<int>>& mono,
                                            int source_tag, std::size_t beam, std::uint64_t model_step = 0);

/// supervised_loss on (pseudo_source -> true_target).
Var bt_loss(const TransformerConfig& config, const BoundParameters& params, Tape& tape,
            const std::vector<PseudoPair>& pairs, int target_tag, const ForwardOptions& options = {});

}  // namespace udmt
