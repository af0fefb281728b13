#pragma once

// A small synthetic experiment that trains in milliseconds per step.

#include "udmt/data_synth.hpp"
#include "udmt/tokenizer.hpp"
#include "udmt/training.hpp"

namespace testing_fixture {

inline udmt::SynthConfig tiny_synth() {
  udmt::SynthConfig c;
  c.v_general = 20;
  c.v_domain = 10;
  c.num_domains = 2;
  c.min_len = 3;
  c.max_len = 6;
  return c;
}

inline udmt::SynthSizes tiny_sizes() {
  udmt::SynthSizes s;
  s.general_parallel = 200;
  s.general_dev = 10;
  s.general_mono = 200;
  s.domain_mono = 100;
  s.test = 20;
  return s;
}

inline udmt::ExperimentData tiny_experiment() {
  auto data = udmt::gen_dataset(udmt::SynthLang(tiny_synth()), tiny_sizes());
  auto tok = udmt::tokenizer_for_dataset(data, udmt::TokenizerMode::kAtomic);
  return udmt::prepare_experiment(data, std::move(tok));
}

inline udmt::TransformerConfig tiny_model_config(const udmt::ExperimentData& e) {
  udmt::TransformerConfig c;
  c.num_layers = 1;
  c.d_model = 16;
  c.num_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 24;
  c.dropout_rate = 0.1;
  return udmt::model_config_for(e.tokenizer, c);
}

inline udmt::TrainOptions tiny_options() {
  udmt::TrainOptions o;
  o.batch_size = 8;
  o.adam.base_lr = 1e-3;
  o.adam.warmup_steps = 20;
  o.eval_every = 10;
  return o;
}

}  // namespace testing_fixture
