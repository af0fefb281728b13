#include "udmt/model.hpp"

#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

#include "udmt/checkpoint.hpp"
#include "udmt/ops.hpp"
#include "udmt/rng.hpp"
#include "udmt/special_tokens.hpp"

namespace udmt {

void TransformerConfig::validate() const {
  if (num_layers == 0 || d_model == 0 || num_heads == 0 || d_ff == 0 || max_seq_len == 0) {
    throw std::invalid_argument("TransformerConfig: all dimensions must be positive");
  }
  if (d_model % num_heads != 0) {
    throw std::invalid_argument(
        fmt::format("TransformerConfig: d_model {} not divisible by num_heads {}", d_model, num_heads));
  }
  if (vocab_size <= num_special_tokens) {
    throw std::invalid_argument(fmt::format("TransformerConfig: vocab_size {} leaves no room beyond {} special tokens",
                                            vocab_size, num_special_tokens));
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::invalid_argument(fmt::format("TransformerConfig: dropout_rate {} not in [0, 1)", dropout_rate));
  }
}

std::map<std::string, std::string> TransformerConfig::to_metadata() const {
  return {
      {"model.num_layers", std::to_string(num_layers)},
      {"model.d_model", std::to_string(d_model)},
      {"model.num_heads", std::to_string(num_heads)},
      {"model.d_ff", std::to_string(d_ff)},
      {"model.max_seq_len", std::to_string(max_seq_len)},
      {"model.dropout_rate", fmt::format("{}", dropout_rate)},
      {"model.vocab_size", std::to_string(vocab_size)},
      {"model.num_special_tokens", std::to_string(num_special_tokens)},
  };
}

TransformerConfig TransformerConfig::from_metadata(const std::map<std::string, std::string>& meta) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw std::runtime_error(fmt::format("model metadata is missing '{}'", key));
    return it->second;
  };
  TransformerConfig c;
  c.num_layers = std::stoul(get("model.num_layers"));
  c.d_model = std::stoul(get("model.d_model"));
  c.num_heads = std::stoul(get("model.num_heads"));
  c.d_ff = std::stoul(get("model.d_ff"));
  c.max_seq_len = std::stoul(get("model.max_seq_len"));
  c.dropout_rate = std::stod(get("model.dropout_rate"));
  c.vocab_size = std::stoul(get("model.vocab_size"));
  c.num_special_tokens = std::stoul(get("model.num_special_tokens"));
  c.validate();
  return c;
}

namespace {

struct ParamSpec {
  std::string name;
  Shape shape;
  enum class Init { kXavier, kEmbedding, kZero, kOne } init;
};

void attention_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) out.push_back({prefix + "." + w, {d, d}, ParamSpec::Init::kXavier});
  // No key bias: it shifts every score in a softmax row equally and never changes the output.
  for (const char* b : {"bq", "bv", "bo"}) out.push_back({prefix + "." + b, {d}, ParamSpec::Init::kZero});
}

void norm_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
  out.push_back({prefix + ".g", {d}, ParamSpec::Init::kOne});
  out.push_back({prefix + ".b", {d}, ParamSpec::Init::kZero});
}

void ff_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d, std::size_t ff) {
  out.push_back({prefix + ".w1", {d, ff}, ParamSpec::Init::kXavier});
  out.push_back({prefix + ".b1", {ff}, ParamSpec::Init::kZero});
  out.push_back({prefix + ".w2", {ff, d}, ParamSpec::Init::kXavier});
  out.push_back({prefix + ".b2", {d}, ParamSpec::Init::kZero});
}

std::vector<ParamSpec> parameter_specs(const TransformerConfig& c) {
  std::vector<ParamSpec> specs;
  const auto d = c.d_model;
  specs.push_back({"embed", {c.vocab_size, d}, ParamSpec::Init::kEmbedding});
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const auto p = fmt::format("enc.{}", l);
    norm_specs(specs, p + ".ln1", d);
    attention_specs(specs, p + ".attn", d);
    norm_specs(specs, p + ".ln2", d);
    ff_specs(specs, p + ".ff", d, c.d_ff);
  }
  norm_specs(specs, "enc.ln_final", d);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const auto p = fmt::format("dec.{}", l);
    norm_specs(specs, p + ".ln1", d);
    attention_specs(specs, p + ".self", d);
    norm_specs(specs, p + ".ln2", d);
    attention_specs(specs, p + ".cross", d);
    norm_specs(specs, p + ".ln3", d);
    ff_specs(specs, p + ".ff", d, c.d_ff);
  }
  norm_specs(specs, "dec.ln_final", d);
  return specs;
}

}  // namespace

std::size_t transformer_parameter_count(const TransformerConfig& config) {
  std::size_t n = 0;
  for (const auto& s : parameter_specs(config)) n += shape_numel(s.shape);
  return n;
}

TransformerModel::TransformerModel(TransformerConfig config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  auto rng = std::mt19937_64(init_seed);
  for (const auto& spec : parameter_specs(config_)) {
    Tensor t(spec.shape);
    auto data = t.mutable_data();
    switch (spec.init) {
      case ParamSpec::Init::kXavier: {
        const double a = std::sqrt(6.0 / static_cast<double>(spec.shape[0] + spec.shape[1]));
        for (auto& x : data) x = (2.0 * uniform01(rng) - 1.0) * a;
        break;
      }
      case ParamSpec::Init::kEmbedding: {
        const double sd = 1.0 / std::sqrt(static_cast<double>(config_.d_model));
        for (auto& x : data) x = standard_normal(rng) * sd;
        break;
      }
      case ParamSpec::Init::kOne:
        for (auto& x : data) x = 1.0;
        break;
      case ParamSpec::Init::kZero:
        break;
    }
    params_.emplace(spec.name, std::move(t));
  }
}

TransformerModel::TransformerModel(TransformerConfig config, ParameterSet params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  for (const auto& spec : parameter_specs(config_)) {
    auto it = params_.find(spec.name);
    if (it == params_.end()) throw std::invalid_argument(fmt::format("model parameters lack '{}'", spec.name));
    if (it->second.shape() != spec.shape) {
      throw std::invalid_argument(fmt::format("parameter '{}' has shape {}, configuration expects {}", spec.name,
                                              shape_str(it->second.shape()), shape_str(spec.shape)));
    }
  }
  if (params_.size() != parameter_specs(config_).size()) {
    throw std::invalid_argument("model parameters contain entries the configuration does not define");
  }
}

Seq2SeqBatch Seq2SeqBatch::from_rows(const std::vector<std::vector<int>>& src,
                                     const std::vector<std::vector<int>>& dec_in,
                                     const std::vector<std::vector<int>>& dec_target,
                                     const std::vector<std::vector<std::uint8_t>>& loss_mask) {
  const auto b = src.size();
  if (b == 0) throw std::invalid_argument("Seq2SeqBatch: empty batch");
  if (dec_in.size() != b || dec_target.size() != b || loss_mask.size() != b) {
    throw std::invalid_argument("Seq2SeqBatch: row counts differ");
  }
  Seq2SeqBatch out;
  out.batch = b;
  for (std::size_t i = 0; i < b; ++i) {
    if (src[i].empty() || dec_in[i].empty()) throw std::invalid_argument("Seq2SeqBatch: empty row");
    if (dec_target[i].size() != dec_in[i].size() || loss_mask[i].size() != dec_in[i].size()) {
      throw std::invalid_argument(fmt::format(
          "Seq2SeqBatch: row {} has {} decoder inputs, {} targets and {} mask entries", i, dec_in[i].size(),
          dec_target[i].size(), loss_mask[i].size()));
    }
    out.src_len = std::max(out.src_len, src[i].size());
    out.tgt_len = std::max(out.tgt_len, dec_in[i].size());
  }
  out.src.assign(b * out.src_len, kPadId);
  out.dec_in.assign(b * out.tgt_len, kPadId);
  out.dec_target.assign(b * out.tgt_len, kPadId);
  out.loss_mask.assign(b * out.tgt_len, 0);
  for (std::size_t i = 0; i < b; ++i) {
    std::copy(src[i].begin(), src[i].end(), out.src.begin() + static_cast<long>(i * out.src_len));
    std::copy(dec_in[i].begin(), dec_in[i].end(), out.dec_in.begin() + static_cast<long>(i * out.tgt_len));
    std::copy(dec_target[i].begin(), dec_target[i].end(), out.dec_target.begin() + static_cast<long>(i * out.tgt_len));
    std::copy(loss_mask[i].begin(), loss_mask[i].end(), out.loss_mask.begin() + static_cast<long>(i * out.tgt_len));
  }
  return out;
}

std::vector<double> position_encoding(std::size_t position, std::size_t d_model) {
  std::vector<double> row(d_model);
  for (std::size_t i = 0; i < d_model; i += 2) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(d_model));
    row[i] = std::sin(static_cast<double>(position) * freq);
    if (i + 1 < d_model) row[i + 1] = std::cos(static_cast<double>(position) * freq);
  }
  return row;
}

namespace {

Var maybe_dropout(const Var& x, const TransformerConfig& c, const ForwardOptions& o) {
  if (!o.dropout_rng || c.dropout_rate == 0.0) return x;
  return ops::dropout(x, c.dropout_rate, *o.dropout_rng);
}

Var embed(const TransformerConfig& c, const BoundParameters& p, Tape& tape, std::span<const int> ids,
          std::size_t batch, std::size_t len, const ForwardOptions& o) {
  const auto d = c.d_model;
  std::vector<double> pe(batch * len * d);
  for (std::size_t t = 0; t < len; ++t) {
    auto row = position_encoding(t, d);
    for (std::size_t b = 0; b < batch; ++b) std::copy(row.begin(), row.end(), pe.begin() + static_cast<long>((b * len + t) * d));
  }
  auto tok = ops::scale(ops::embedding_lookup(p["embed"], ids), std::sqrt(static_cast<double>(d)));
  auto x = ops::add(tok, tape.constant(Tensor({batch * len, d}, std::move(pe))));
  return maybe_dropout(x, c, o);
}

Var linear(const BoundParameters& p, const Var& x, const std::string& w, const std::string& b) {
  return ops::add(ops::matmul(x, p[w]), p[b]);
}

Var layer_norm(const BoundParameters& p, const Var& x, const std::string& prefix) {
  return ops::layer_norm_lastdim(x, p[prefix + ".g"], p[prefix + ".b"]);
}

Var feed_forward(const TransformerConfig& c, const BoundParameters& p, const Var& x, const std::string& prefix,
                 const ForwardOptions& o) {
  auto h = ops::relu(linear(p, x, prefix + ".w1", prefix + ".b1"));
  return maybe_dropout(linear(p, h, prefix + ".w2", prefix + ".b2"), c, o);
}

// [batch*len, d] -> [batch*heads, len, dh]
Var split_heads(const Var& x, std::size_t batch, std::size_t len, std::size_t heads, std::size_t dh) {
  auto r = ops::reshape(x, {batch, len, heads, dh});
  return ops::reshape(ops::transpose12(r), {batch * heads, len, dh});
}

Var merge_heads(const Var& x, std::size_t batch, std::size_t len, std::size_t heads, std::size_t dh) {
  auto r = ops::reshape(x, {batch, heads, len, dh});
  return ops::reshape(ops::transpose12(r), {batch * len, heads * dh});
}

void check_lengths(const TransformerConfig& c, const Seq2SeqBatch& b) {
  if (b.src_len > c.max_seq_len || b.tgt_len > c.max_seq_len) {
    throw std::length_error(fmt::format("sequence length (source {}, target {}) exceeds max_seq_len {}", b.src_len,
                                        b.tgt_len, c.max_seq_len));
  }
  if (b.src.size() != b.batch * b.src_len || b.dec_in.size() != b.batch * b.tgt_len) {
    throw std::invalid_argument("Seq2SeqBatch: array sizes do not match declared shape");
  }
}

}  // namespace

Var multi_head_attention(const TransformerConfig& c, const BoundParameters& p, const std::string& prefix,
                         const Var& queries, const Var& keys_values, std::size_t batch, std::size_t tq,
                         std::size_t tk, std::span<const std::uint8_t> keep, const ForwardOptions& o) {
  const auto h = c.num_heads;
  const auto dh = c.d_model / h;
  auto q = split_heads(linear(p, queries, prefix + ".wq", prefix + ".bq"), batch, tq, h, dh);
  auto k = split_heads(ops::matmul(keys_values, p[prefix + ".wk"]), batch, tk, h, dh);
  auto v = split_heads(linear(p, keys_values, prefix + ".wv", prefix + ".bv"), batch, tk, h, dh);
  auto scores = ops::scale(ops::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  auto probs = ops::masked_softmax_lastdim(scores, keep, h);
  auto ctx = merge_heads(ops::bmm(probs, v), batch, tq, h, dh);
  return maybe_dropout(linear(p, ctx, prefix + ".wo", prefix + ".bo"), c, o);
}

Var forward_teacher_forced(const TransformerConfig& c, const BoundParameters& p, Tape& tape,
                           const Seq2SeqBatch& b, const ForwardOptions& o) {
  check_lengths(c, b);
  const auto B = b.batch, S = b.src_len, T = b.tgt_len;

  std::vector<std::uint8_t> src_keep(B * S * S), cross_keep(B * T * S), self_keep(B * T * T);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t q = 0; q < S; ++q)
      for (std::size_t k = 0; k < S; ++k) src_keep[(i * S + q) * S + k] = b.src[i * S + k] != kPadId;
    for (std::size_t q = 0; q < T; ++q) {
      for (std::size_t k = 0; k < S; ++k) cross_keep[(i * T + q) * S + k] = b.src[i * S + k] != kPadId;
      for (std::size_t k = 0; k < T; ++k) self_keep[(i * T + q) * T + k] = k <= q && b.dec_in[i * T + k] != kPadId;
    }
  }

  auto x = embed(c, p, tape, b.src, B, S, o);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const auto pre = fmt::format("enc.{}", l);
    auto h = layer_norm(p, x, pre + ".ln1");
    x = ops::add(x, multi_head_attention(c, p, pre + ".attn", h, h, B, S, S, src_keep, o));
    x = ops::add(x, feed_forward(c, p, layer_norm(p, x, pre + ".ln2"), pre + ".ff", o));
  }
  auto memory = layer_norm(p, x, "enc.ln_final");

  auto y = embed(c, p, tape, b.dec_in, B, T, o);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const auto pre = fmt::format("dec.{}", l);
    auto h = layer_norm(p, y, pre + ".ln1");
    y = ops::add(y, multi_head_attention(c, p, pre + ".self", h, h, B, T, T, self_keep, o));
    h = layer_norm(p, y, pre + ".ln2");
    y = ops::add(y, multi_head_attention(c, p, pre + ".cross", h, memory, B, T, S, cross_keep, o));
    y = ops::add(y, feed_forward(c, p, layer_norm(p, y, pre + ".ln3"), pre + ".ff", o));
  }
  auto out = layer_norm(p, y, "dec.ln_final");
  auto logits = ops::matmul(out, p["embed"], true);
  return ops::reshape(logits, {B, T, c.vocab_size});
}

Var sequence_loss(const TransformerConfig& c, const BoundParameters& p, Tape& tape, const Seq2SeqBatch& b,
                  const ForwardOptions& o) {
  auto logits = forward_teacher_forced(c, p, tape, b, o);
  auto flat = ops::reshape(logits, {b.batch * b.tgt_len, c.vocab_size});
  return ops::cross_entropy_masked(flat, b.dec_target, b.loss_mask);
}

LossAndGradients loss_and_gradients(const TransformerModel& model, const Seq2SeqBatch& batch,
                                    const ForwardOptions& options) {
  Tape tape;
  BoundParameters bound(tape, model.params());
  auto loss = sequence_loss(model.config(), bound, tape, batch, options);
  auto grads = tape.backward(loss);
  return {loss.value().item(), bound.named(grads)};
}

void save_model(const TransformerModel& model, const std::string& path,
                const std::map<std::string, std::string>& extra_metadata) {
  Checkpoint ckpt;
  ckpt.params = model.params();
  ckpt.metadata = extra_metadata;
  for (auto& [k, v] : model.config().to_metadata()) ckpt.metadata[k] = v;
  save_checkpoint(path, ckpt);
}

TransformerModel load_model(const std::string& path, const TransformerConfig* expected) {
  auto ckpt = load_checkpoint(path);
  auto config = TransformerConfig::from_metadata(ckpt.metadata);
  if (expected && !(*expected == config)) {
    throw std::runtime_error(fmt::format(
        "checkpoint {}: configuration mismatch (layers {}, d_model {}, heads {}, d_ff {}, vocab {} in file; "
        "expected layers {}, d_model {}, heads {}, d_ff {}, vocab {})",
        path, config.num_layers, config.d_model, config.num_heads, config.d_ff, config.vocab_size,
        expected->num_layers, expected->d_model, expected->num_heads, expected->d_ff, expected->vocab_size));
  }
  return TransformerModel(config, std::move(ckpt.params));
}

}  // namespace udmt
