#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "slt/metrics.hpp"
#include "slt/rng.hpp"

namespace {

std::vector<std::string> make_corpus(size_t n, uint64_t seed) {
  static const std::vector<std::string> pool = {
      "the", "cat", "sat", "on", "a", "mat", "dog", "ran", "into", "blue", "sky", "it's", "good"};
  slt::Rng rng(seed);
  std::vector<std::string> corpus;
  for (size_t i = 0; i < n; ++i) {
    std::string s;
    size_t len = 5 + rng.below(12);
    for (size_t j = 0; j < len; ++j) {
      if (j) s.push_back(' ');
      s += pool[static_cast<size_t>(rng.below(pool.size()))];
    }
    s.push_back('.');
    corpus.push_back(std::move(s));
  }
  return corpus;
}

void BM_CorpusBleu(benchmark::State& state) {
  auto hyps = make_corpus(static_cast<size_t>(state.range(0)), 1);
  auto refs = make_corpus(static_cast<size_t>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(slt::corpus_bleu(hyps, refs).score);
}
BENCHMARK(BM_CorpusBleu)->Arg(100)->Arg(1000);

void BM_CorpusRbleu(benchmark::State& state) {
  auto hyps = make_corpus(static_cast<size_t>(state.range(0)), 3);
  auto refs = make_corpus(static_cast<size_t>(state.range(0)), 4);
  const slt::Blacklist& bl = slt::Blacklist::builtin();
  for (auto _ : state) benchmark::DoNotOptimize(slt::corpus_rbleu(hyps, refs, bl));
}
BENCHMARK(BM_CorpusRbleu)->Arg(100)->Arg(1000);

void BM_Reduce(benchmark::State& state) {
  const slt::Blacklist& bl = slt::Blacklist::builtin();
  std::string text = "In this clip I'm going to show you how to tape your cables down.";
  for (auto _ : state) benchmark::DoNotOptimize(slt::reduce(text, bl));
}
BENCHMARK(BM_Reduce);

}  // namespace

BENCHMARK_MAIN();
