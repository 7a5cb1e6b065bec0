#pragma once

#include <string>
#include <vector>

#include "slt/inference.hpp"
#include "slt/metrics.hpp"
#include "slt/model.hpp"
#include "slt/textproc.hpp"

namespace slt {

struct Hypothesis {
  std::vector<int> tokens;  // <s> ... (</s> when naturally finished)
  double log_prob = 0.0;
  double normalized_score = 0.0;  // log_prob / generated_length^alpha
};

struct DecodeOptions {
  int beam = 5;
  int max_len = 256;
  double len_penalty = 1.0;  // alpha
};

Hypothesis greedy_decode(const ModelParams<float>& params, const TensorData<float>& feats,
                         const DecodeOptions& opts);

// Length-normalized beam search; hypotheses ranked by normalized score with
// deterministic (score, token-sequence) tie-breaking.
std::vector<Hypothesis> beam_search(const ModelParams<float>& params, const TensorData<float>& feats,
                                    const DecodeOptions& opts);

// Decodes every feature sequence independently (parallel across sentences)
// and returns the top hypothesis per input, in input order.
std::vector<Hypothesis> decode_corpus(const ModelParams<float>& params,
                                      const std::vector<TensorData<float>>& feats,
                                      const DecodeOptions& opts);

// Full output pipeline: beam decode, strip specials, detokenize, truecase.
std::vector<std::string> translate_corpus(const ModelParams<float>& params, const TokenizerModel& tokenizer,
                                          const CasingModel& truecaser,
                                          const std::vector<TensorData<float>>& feats,
                                          const DecodeOptions& opts);

}  // namespace slt
