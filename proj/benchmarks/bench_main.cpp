#include <benchmark/benchmark.h>

#include <random>

#include "udmt/adam.hpp"
#include "udmt/data_synth.hpp"
#include "udmt/decode.hpp"
#include "udmt/eval_report.hpp"
#include "udmt/model.hpp"
#include "udmt/objectives.hpp"
#include "udmt/ops.hpp"
#include "udmt/rng.hpp"
#include "udmt/tape.hpp"
#include "udmt/tokenizer.hpp"
#include "udmt/training.hpp"

using namespace udmt;
using namespace udmt::ops;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = standard_normal(rng);
  return t;
}

// Default synthetic language with small corpora, shared by the model benchmarks.
struct Fixture {
  ExperimentData data;
  TransformerConfig config;

  static const Fixture& get() {
    static const Fixture f = [] {
      SynthSizes sizes;
      sizes.general_parallel = 512;
      sizes.general_dev = 16;
      sizes.general_mono = 64;
      sizes.domain_mono = 64;
      sizes.test = 64;
      const auto dataset = gen_dataset(SynthLang(SynthConfig{}), sizes);
      auto tok = tokenizer_for_dataset(dataset, TokenizerMode::kAtomic);
      Fixture out{prepare_experiment(dataset, std::move(tok)), {}};
      TransformerConfig base;
      base.dropout_rate = 0.0;
      out.config = model_config_for(out.data.tokenizer, base);
      return out;
    }();
    return f;
  }
};

void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const auto a = random_tensor({n, n}, rng);
  const auto b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    Tape tape;
    auto x = tape.leaf(a);
    auto y = tape.leaf(b);
    auto grads = tape.backward(sum(matmul(x, y)));
    benchmark::DoNotOptimize(grads);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(32)->Arg(64)->Arg(128);

void BM_SoftmaxForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  const auto a = random_tensor({n, n}, rng);
  const auto w = random_tensor({n, n}, rng);
  for (auto _ : state) {
    Tape tape;
    auto x = tape.leaf(a);
    auto grads = tape.backward(sum(mul(softmax_lastdim(x), tape.constant(w))));
    benchmark::DoNotOptimize(grads);
  }
}
BENCHMARK(BM_SoftmaxForwardBackward)->Arg(64)->Arg(256);

void BM_TrainingStep(benchmark::State& state) {
  const auto& f = Fixture::get();
  const auto batch_size = static_cast<std::size_t>(state.range(0));
  const auto& L = f.data.corpora.languages;
  const auto& parallel = f.data.corpora.parallel.at(kGeneralDomain);
  Sentences src(parallel.at(L[0]).begin(), parallel.at(L[0]).begin() + batch_size);
  Sentences tgt(parallel.at(L[1]).begin(), parallel.at(L[1]).begin() + batch_size);
  const auto batch = supervised_batch(src, tgt, f.data.tokenizer.language_tag(L[1]));
  TransformerModel model(f.config, 1);
  AdamState adam(model.params(), AdamConfig{});
  for (auto _ : state) {
    auto lg = loss_and_gradients(model, batch);
    adam_step(model.params(), lg.grads, adam);
    benchmark::DoNotOptimize(lg.loss);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch_size));
}
BENCHMARK(BM_TrainingStep)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_GreedyDecodeBatch(benchmark::State& state) {
  const auto& f = Fixture::get();
  const auto& test = f.data.tests.front();
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<std::vector<int>> srcs;
  std::vector<std::size_t> limits;
  const int tag = f.data.tokenizer.language_tag(test.target_language);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> s{tag};
    s.insert(s.end(), test.source[i].begin(), test.source[i].end());
    srcs.push_back(std::move(s));
    limits.push_back(decode_limit(test.source[i].size() - 1, f.config));
  }
  const TransformerModel model(f.config, 1);
  for (auto _ : state) benchmark::DoNotOptimize(greedy_decode_batch(model, srcs, limits));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_GreedyDecodeBatch)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_CorpusBleu(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  SynthSizes sizes;
  sizes.general_parallel = n;
  sizes.general_dev = 1;
  sizes.general_mono = 1;
  sizes.domain_mono = 1;
  sizes.test = 1;
  const auto data = gen_dataset(SynthLang(SynthConfig{}), sizes);
  // Score the target side against itself shifted by one sentence.
  std::vector<std::string> hyps(data.general_train.target.begin() + 1, data.general_train.target.end());
  hyps.push_back(data.general_train.target.front());
  for (auto _ : state) benchmark::DoNotOptimize(corpus_bleu(hyps, data.general_train.target));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_CorpusBleu)->Arg(500)->Arg(4000);

void BM_BpeEncode(benchmark::State& state) {
  SynthSizes sizes;
  sizes.general_parallel = 2000;
  sizes.general_dev = 1;
  sizes.general_mono = 1;
  sizes.domain_mono = 1;
  sizes.test = 1;
  const auto data = gen_dataset(SynthLang(SynthConfig{}), sizes);
  const auto tok = Tokenizer::train_bpe(data.general_train.source, 600, data.languages);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(tok.encode(data.general_train.source[i], "tgt"));
    i = (i + 1) % data.general_train.source.size();
  }
}
BENCHMARK(BM_BpeEncode);

}  // namespace

BENCHMARK_MAIN();
