#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "udmt/params.hpp"
#include "udmt/tape.hpp"

namespace udmt {

struct TransformerConfig {
  std::size_t num_layers = 2;
  std::size_t d_model = 64;
  std::size_t num_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_seq_len = 64;
  double dropout_rate = 0.1;
  std::size_t vocab_size = 0;
  /// Ids [0, num_special_tokens) are reserved tokens and language tags; the
  /// decoders never emit them except eos.
  std::size_t num_special_tokens = 4;

  void validate() const;
  std::map<std::string, std::string> to_metadata() const;
  static TransformerConfig from_metadata(const std::map<std::string, std::string>& meta);
  bool operator==(const TransformerConfig&) const = default;
};

/// Number of trainable scalars; depends on the configuration only.
std::size_t transformer_parameter_count(const TransformerConfig& config);

/// Padded batch for teacher-forced passes. All arrays are row-major
/// [batch, len]; pad positions in `src` and `dec_in` hold kPadId and are
/// never attended to.
struct Seq2SeqBatch {
  std::size_t batch = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<int> src;
  std::vector<int> dec_in;
  std::vector<int> dec_target;
  std::vector<std::uint8_t> loss_mask;

  /// Row-wise padding of ragged sequences. Each target row is scored where
  /// its mask is set; mask rows may be shorter than their dec_in rows.
  static Seq2SeqBatch from_rows(const std::vector<std::vector<int>>& src,
                                const std::vector<std::vector<int>>& dec_in,
                                const std::vector<std::vector<int>>& dec_target,
                                const std::vector<std::vector<std::uint8_t>>& loss_mask);
};

/// Encoder-decoder transformer with pre-norm residual blocks, sinusoidal
/// positions and a single embedding matrix shared by the encoder input, the
/// decoder input and (transposed) the output projection.
class TransformerModel {
 public:
  TransformerModel(TransformerConfig config, std::uint64_t init_seed);
  TransformerModel(TransformerConfig config, ParameterSet params);

  const TransformerConfig& config() const { return config_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }

 private:
  TransformerConfig config_;
  ParameterSet params_;
};

struct ForwardOptions {
  /// Non-null enables dropout at config.dropout_rate.
  std::mt19937_64* dropout_rng = nullptr;
};

/// Teacher-forced logits [batch, tgt_len, vocab]. Throws if a sequence is
/// longer than max_seq_len.
Var forward_teacher_forced(const TransformerConfig& config, const BoundParameters& params, Tape& tape,
                           const Seq2SeqBatch& batch, const ForwardOptions& options = {});

/// Token-mean cross entropy of the batch's masked target positions.
Var sequence_loss(const TransformerConfig& config, const BoundParameters& params, Tape& tape,
                  const Seq2SeqBatch& batch, const ForwardOptions& options = {});

/// Multi-head attention block used by the encoder and the decoder:
/// queries [batch*tq, d], keys/values [batch*tk, d], keep mask [batch, tq, tk].
Var multi_head_attention(const TransformerConfig& config, const BoundParameters& params, const std::string& prefix,
                         const Var& queries, const Var& keys_values, std::size_t batch, std::size_t tq,
                         std::size_t tk, std::span<const std::uint8_t> keep, const ForwardOptions& options);

/// Sinusoidal position encoding row for `position`.
std::vector<double> position_encoding(std::size_t position, std::size_t d_model);

/// Logits and loss gradients with respect to named parameters for one batch.
struct LossAndGradients {
  double loss;
  NamedGradients grads;
};
LossAndGradients loss_and_gradients(const TransformerModel& model, const Seq2SeqBatch& batch,
                                    const ForwardOptions& options = {});

void save_model(const TransformerModel& model, const std::string& path,
                const std::map<std::string, std::string>& extra_metadata = {});
/// Loads a checkpoint; when `expected` is given the embedded configuration must match it.
TransformerModel load_model(const std::string& path, const TransformerConfig* expected = nullptr);

}  // namespace udmt
