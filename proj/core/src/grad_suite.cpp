#include "udmt/grad_suite.hpp"

#include <cmath>
#include <fmt/format.h>

#include "udmt/model.hpp"
#include "udmt/ops.hpp"
#include "udmt/rng.hpp"
#include "udmt/special_tokens.hpp"

namespace udmt {

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

// Values in [-1, -0.1] U [0.1, 1]: finite differences never straddle the ReLU kink.
Tensor away_from_zero(std::mt19937_64& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) {
    const double mag = 0.1 + 0.9 * uniform01(rng);
    v = uniform01(rng) < 0.5 ? -mag : mag;
  }
  return t;
}

// sum(out * W) for a fixed W derived from the seed and the output shape.
Var contract(Tape& tape, const Var& out, std::uint64_t seed) {
  auto rng = substream(seed, "contract/" + shape_str(out.shape()));
  auto w = tape.constant(random_tensor(rng, out.shape()));
  return ops::sum(ops::mul(out, w));
}

using Body = std::function<Var(Tape&, const std::vector<Var>&)>;

GradCase make_case(std::string name, std::uint64_t seed, Body body,
                   std::vector<std::pair<std::string, Tensor>> inputs) {
  GradCase c;
  c.name = std::move(name);
  c.inputs = std::move(inputs);
  c.program = [seed, body = std::move(body)](Tape& tape, const std::vector<Var>& in) {
    return contract(tape, body(tape, in), seed);
  };
  return c;
}

}  // namespace

std::vector<GradCase> kernel_grad_cases(std::uint64_t seed) {
  auto rng = substream(seed, "grad-suite/inputs");
  std::vector<GradCase> cases;

  cases.push_back(make_case(
      "matmul", seed, [](Tape&, const std::vector<Var>& v) { return ops::matmul(v[0], v[1]); },
      {{"a", random_tensor(rng, {3, 5})}, {"b", random_tensor(rng, {5, 4})}}));
  cases.push_back(make_case(
      "matmul_transposed", seed, [](Tape&, const std::vector<Var>& v) { return ops::matmul(v[0], v[1], true); },
      {{"a", random_tensor(rng, {3, 5})}, {"b", random_tensor(rng, {4, 5})}}));
  cases.push_back(make_case(
      "bmm", seed, [](Tape&, const std::vector<Var>& v) { return ops::bmm(v[0], v[1]); },
      {{"a", random_tensor(rng, {2, 3, 4})}, {"b", random_tensor(rng, {2, 4, 5})}}));
  cases.push_back(make_case(
      "bmm_transposed", seed, [](Tape&, const std::vector<Var>& v) { return ops::bmm(v[0], v[1], true); },
      {{"a", random_tensor(rng, {2, 3, 4})}, {"b", random_tensor(rng, {2, 5, 4})}}));
  cases.push_back(make_case(
      "add", seed, [](Tape&, const std::vector<Var>& v) { return ops::add(v[0], v[1]); },
      {{"a", random_tensor(rng, {4, 6})}, {"b", random_tensor(rng, {4, 6})}}));
  cases.push_back(make_case(
      "add_bias", seed, [](Tape&, const std::vector<Var>& v) { return ops::add(v[0], v[1]); },
      {{"a", random_tensor(rng, {2, 3, 6})}, {"bias", random_tensor(rng, {6})}}));
  cases.push_back(make_case(
      "mul", seed, [](Tape&, const std::vector<Var>& v) { return ops::mul(v[0], v[1]); },
      {{"a", random_tensor(rng, {5, 3})}, {"b", random_tensor(rng, {5, 3})}}));
  cases.push_back(make_case(
      "scale", seed, [](Tape&, const std::vector<Var>& v) { return ops::scale(v[0], -1.7); },
      {{"a", random_tensor(rng, {3, 4})}}));
  cases.push_back(make_case(
      "relu", seed, [](Tape&, const std::vector<Var>& v) { return ops::relu(v[0]); },
      {{"a", away_from_zero(rng, {4, 5})}}));
  cases.push_back(make_case(
      "sum", seed, [](Tape&, const std::vector<Var>& v) { return ops::sum(v[0]); },
      {{"a", random_tensor(rng, {3, 3})}}));
  cases.push_back(make_case(
      "softmax_lastdim", seed, [](Tape&, const std::vector<Var>& v) { return ops::softmax_lastdim(v[0]); },
      {{"a", random_tensor(rng, {4, 6}, -2.0, 2.0)}}));

  {
    // Two heads over one batch row; query 0 sees only key 0, the last query row sees nothing.
    std::vector<std::uint8_t> keep = {1, 0, 0, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0};
    cases.push_back(make_case(
        "masked_softmax_lastdim", seed,
        [keep](Tape&, const std::vector<Var>& v) { return ops::masked_softmax_lastdim(v[0], keep, 2); },
        {{"scores", random_tensor(rng, {2, 4, 4}, -2.0, 2.0)}}));
  }

  cases.push_back(make_case(
      "layer_norm_lastdim", seed,
      [](Tape&, const std::vector<Var>& v) { return ops::layer_norm_lastdim(v[0], v[1], v[2]); },
      {{"x", random_tensor(rng, {3, 6}, -2.0, 2.0)},
       {"gain", random_tensor(rng, {6}, 0.5, 1.5)},
       {"bias", random_tensor(rng, {6})}}));

  {
    std::vector<int> ids = {3, 0, 3, 5, 1};
    cases.push_back(make_case(
        "embedding_lookup", seed,
        [ids](Tape&, const std::vector<Var>& v) { return ops::embedding_lookup(v[0], ids); },
        {{"table", random_tensor(rng, {6, 4})}}));
  }

  cases.push_back(make_case(
      "concat", seed, [](Tape&, const std::vector<Var>& v) { return ops::concat({v[0], v[1], v[0]}); },
      {{"a", random_tensor(rng, {2, 3})}, {"b", random_tensor(rng, {4, 3})}}));
  cases.push_back(make_case(
      "slice", seed, [](Tape&, const std::vector<Var>& v) { return ops::slice(v[0], 1, 4); },
      {{"a", random_tensor(rng, {5, 3})}}));
  cases.push_back(make_case(
      "reshape", seed, [](Tape&, const std::vector<Var>& v) { return ops::reshape(v[0], {2, 6}); },
      {{"a", random_tensor(rng, {3, 4})}}));
  cases.push_back(make_case(
      "transpose12", seed, [](Tape&, const std::vector<Var>& v) { return ops::transpose12(v[0]); },
      {{"a", random_tensor(rng, {2, 3, 4, 2})}}));
  cases.push_back(make_case(
      "dropout", seed,
      [seed](Tape&, const std::vector<Var>& v) {
        auto mask_rng = substream(seed, "grad-suite/dropout");
        return ops::dropout(v[0], 0.3, mask_rng);
      },
      {{"a", random_tensor(rng, {4, 5})}}));

  {
    std::vector<int> targets = {1, 4, 0, 2};
    std::vector<std::uint8_t> mask = {1, 0, 1, 1};
    GradCase ce;
    ce.name = "cross_entropy_masked";
    ce.inputs = {{"logits", random_tensor(rng, {4, 5}, -2.0, 2.0)}};
    ce.program = [targets, mask](Tape&, const std::vector<Var>& v) {
      return ops::cross_entropy_masked(v[0], targets, mask);
    };
    cases.push_back(std::move(ce));
  }

  {
    // One multi-head attention block (projections, masked softmax, output projection).
    TransformerConfig cfg;
    cfg.num_layers = 1;
    cfg.d_model = 8;
    cfg.num_heads = 2;
    cfg.d_ff = 16;
    cfg.vocab_size = 10;
    cfg.dropout_rate = 0.0;
    const std::size_t batch = 2, tq = 3, tk = 4;
    std::vector<std::uint8_t> keep(batch * tq * tk, 1);
    for (std::size_t q = 0; q < tq; ++q) keep[(1 * tq + q) * tk + 3] = 0;
    std::vector<std::pair<std::string, Tensor>> inputs = {{"queries", random_tensor(rng, {batch * tq, 8})},
                                                         {"keys_values", random_tensor(rng, {batch * tk, 8})}};
    const std::vector<std::string> names = {"wq", "wk", "wv", "wo", "bq", "bv", "bo"};
    for (const auto& n : names) {
      Shape s = n[0] == 'w' ? Shape{8, 8} : Shape{8};
      inputs.emplace_back("attn." + n, random_tensor(rng, s, -0.6, 0.6));
    }
    cases.push_back(make_case(
        "attention", seed,
        [cfg, keep, names, batch](Tape&, const std::vector<Var>& v) {
          std::map<std::string, Var> vars;
          for (std::size_t i = 0; i < names.size(); ++i) vars.emplace("attn." + names[i], v[2 + i]);
          BoundParameters p(std::move(vars));
          return multi_head_attention(cfg, p, "attn", v[0], v[1], batch, tq, tk, keep, {});
        },
        std::move(inputs)));
  }
  return cases;
}

GradCase transformer_grad_case(std::uint64_t seed) {
  TransformerConfig cfg;
  cfg.num_layers = 1;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.d_ff = 16;
  cfg.max_seq_len = 16;
  cfg.vocab_size = 12;
  cfg.dropout_rate = 0.0;
  TransformerModel model(cfg, derive_seed(seed, "grad-suite/transformer"));

  auto batch = Seq2SeqBatch::from_rows({{4, 7, 9, 5, kEosId}, {4, 10, 6, kEosId}},
                                       {{kBosId, 8, 11, 6}, {kBosId, 9, 7, 7, 10}},
                                       {{8, 11, 6, kEosId}, {9, 7, 7, 10, kEosId}},
                                       {{1, 1, 1, 1}, {1, 1, 1, 1, 1}});
  GradCase c;
  c.name = "transformer_1layer";
  std::vector<std::string> names;
  for (const auto& [name, t] : model.params()) {
    names.push_back(name);
    c.inputs.emplace_back(name, t);
  }
  c.program = [cfg, batch, names](Tape& tape, const std::vector<Var>& v) {
    std::map<std::string, Var> vars;
    for (std::size_t i = 0; i < names.size(); ++i) vars.emplace(names[i], v[i]);
    BoundParameters p(std::move(vars));
    return sequence_loss(cfg, p, tape, batch);
  };
  return c;
}

GradCase faulty_grad_case(std::uint64_t seed) {
  auto rng = substream(seed, "grad-suite/faulty");
  GradCase c;
  c.name = "faulty_scale";
  c.inputs = {{"a", random_tensor(rng, {3, 4})}};
  c.program = [seed](Tape& tape, const std::vector<Var>& v) {
    const auto& x = v[0];
    Tensor out = x.value();
    for (auto& e : out.mutable_data()) e *= 2.0;
    auto y = tape.record(out, {x}, [](BackwardContext& ctx) {
      if (!ctx.needs(0)) return;
      auto g = ctx.grad_in(0);
      auto go = ctx.grad_out();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 1.5 * 2.0 * go[i];
    });
    return contract(tape, y, seed);
  };
  return c;
}

std::vector<GradSuiteResult> run_grad_cases(const std::vector<GradCase>& cases, double epsilon, double threshold) {
  std::vector<GradSuiteResult> results;
  for (const auto& c : cases) {
    auto report = grad_check(c.program, c.inputs, epsilon);
    results.push_back({c.name, report.worst(), report.passed(threshold)});
  }
  return results;
}

}  // namespace udmt
