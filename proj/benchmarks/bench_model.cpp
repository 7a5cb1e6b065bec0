#include <benchmark/benchmark.h>

#include "slt/autodiff.hpp"
#include "slt/decoding.hpp"
#include "slt/inference.hpp"
#include "slt/model.hpp"
#include "slt/rng.hpp"
#include "slt/training.hpp"

namespace {

using namespace slt;

ModelConfig bench_config() {
  ModelConfig cfg;
  cfg.encoder_layers = 2;
  cfg.decoder_layers = 2;
  cfg.embed_dim = 64;
  cfg.ffn_dim = 256;
  cfg.attention_heads = 4;
  cfg.feature_dim = 64;
  cfg.vocab_size = 56;
  cfg.dropout = 0.1;
  return cfg;
}

TensorData<float> random_feats(Shape shape, uint64_t seed) {
  Rng rng(seed);
  TensorData<float> t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.gauss());
  return t;
}

// One optimizer step at the synthetic-acceptance scale: B=32, T=24, U=8.
void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg = bench_config();
  ModelParams<float> params = build_model(cfg, 1);
  OptimState opt;
  for (const auto& name : params.names) {
    opt.m.emplace(name, TensorData<float>(params.at(name).shape));
    opt.v.emplace(name, TensorData<float>(params.at(name).shape));
  }
  TrainConfig tcfg;
  tcfg.clip_norm = 1.0;

  int batch = 32, t_len = 24, u_len = 8;
  TensorData<float> feats = random_feats({batch, t_len, cfg.feature_dim}, 2);
  std::vector<int> src_lens(static_cast<size_t>(batch), t_len);
  Rng rng(3);
  std::vector<int> prev(static_cast<size_t>(batch) * u_len, kBosId);
  std::vector<int> labels(static_cast<size_t>(batch) * u_len);
  for (auto& v : labels) v = 4 + static_cast<int>(rng.below(static_cast<uint64_t>(cfg.vocab_size - 4)));

  int64_t step = 0;
  for (auto _ : state) {
    Graph<float> g;
    ParamVars<float> pv = register_params(g, params, true);
    DropoutPlan plan{cfg.dropout, 7, step, true};
    Var<float> memory = encode_features(g, pv, cfg, feats, src_lens, plan);
    Var<float> logits = decode_logits(g, pv, cfg, memory, src_lens, prev, batch, u_len, plan);
    Var<float> loss = label_smoothed_ce_mean(logits, labels, 0.1, kPadId);
    g.backward(loss);
    std::unordered_map<std::string, TensorData<float>> grads;
    for (const auto& name : params.names)
      if (g.grad_ready(pv.at(name).id)) grads.emplace(name, g.grad_of(pv.at(name).id));
    adam_step(opt, params, grads, 1e-3, tcfg);
    ++step;
    benchmark::DoNotOptimize(params.at("input_proj.bias").data[0]);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_BeamSearch(benchmark::State& state) {
  ModelConfig cfg = bench_config();
  ModelParams<float> params = build_model(cfg, 5);
  TensorData<float> feats = random_feats({24, cfg.feature_dim}, 6);
  DecodeOptions opts;
  opts.beam = static_cast<int>(state.range(0));
  opts.max_len = 40;
  for (auto _ : state) benchmark::DoNotOptimize(beam_search(params, feats, opts).front().log_prob);
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_IncrementalStep(benchmark::State& state) {
  ModelConfig cfg = bench_config();
  ModelParams<float> params = build_model(cfg, 7);
  EncodedBatch enc = encode_for_inference(params, random_feats({5, 24, cfg.feature_dim}, 8),
                                          {24, 24, 24, 24, 24});
  std::vector<int> tokens(5, kBosId);
  for (auto _ : state) {
    state.PauseTiming();
    IncrementalDecoder dec(params, enc, 48);
    state.ResumeTiming();
    for (int t = 0; t < 8; ++t) benchmark::DoNotOptimize(dec.step(tokens).data[0]);
  }
}
BENCHMARK(BM_IncrementalStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
