#include "slt/decoding.hpp"

#include <algorithm>
#include <cmath>

#include "slt/kernels.hpp"

namespace slt {

namespace {

// Log-probabilities with <pad> and <s> masked out of the distribution.
void masked_log_probs(TensorData<float>& logits) {
  int64_t vocab = logits.dim(logits.rank() - 1);
  int64_t rows = logits.numel() / vocab;
  for (int64_t r = 0; r < rows; ++r) {
    float* row = logits.ptr() + r * vocab;
    row[kPadId] = -std::numeric_limits<float>::infinity();
    row[kBosId] = -std::numeric_limits<float>::infinity();
    float max_v = row[kEosId];
    for (int64_t j = 0; j < vocab; ++j) max_v = std::max(max_v, row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < vocab; ++j)
      if (std::isfinite(row[j])) sum += std::exp(static_cast<double>(row[j]) - max_v);
    float lse = max_v + static_cast<float>(std::log(sum));
    for (int64_t j = 0; j < vocab; ++j) row[j] -= lse;
  }
}

double normalized(double log_prob, int length, double alpha) {
  if (length <= 0) return log_prob;
  return log_prob / std::pow(static_cast<double>(length), alpha);
}

EncodedBatch encode_single(const ModelParams<float>& params, const TensorData<float>& feats) {
  if (feats.rank() != 2)
    throw ShapeMismatch("decoding expects a single [T,D] feature matrix, got " + shape_str(feats.shape));
  TensorData<float> batched(Shape{1, feats.dim(0), feats.dim(1)}, feats.data);
  return encode_for_inference(params, batched, {feats.dim(0)});
}

}  // namespace

Hypothesis greedy_decode(const ModelParams<float>& params, const TensorData<float>& feats,
                         const DecodeOptions& opts) {
  EncodedBatch enc = encode_single(params, feats);
  IncrementalDecoder dec(params, enc, opts.max_len + 1);
  Hypothesis hyp;
  hyp.tokens.push_back(kBosId);
  int last = kBosId;
  for (int t = 0; t < opts.max_len; ++t) {
    TensorData<float> logits = dec.step({last});
    masked_log_probs(logits);
    const float* row = logits.ptr();
    int best = kEosId;
    float best_lp = -std::numeric_limits<float>::infinity();
    for (int j = 0; j < params.cfg.vocab_size; ++j)
      if (row[j] > best_lp) {  // strict: ties resolve to the lowest id
        best_lp = row[j];
        best = j;
      }
    hyp.tokens.push_back(best);
    hyp.log_prob += best_lp;
    last = best;
    if (best == kEosId) break;
  }
  int gen = static_cast<int>(hyp.tokens.size()) - 1;
  hyp.normalized_score = normalized(hyp.log_prob, gen, opts.len_penalty);
  return hyp;
}

std::vector<Hypothesis> beam_search(const ModelParams<float>& params, const TensorData<float>& feats,
                                    const DecodeOptions& opts) {
  const int beam = opts.beam;
  const int vocab = params.cfg.vocab_size;
  EncodedBatch enc = replicate_rows(encode_single(params, feats), beam);
  IncrementalDecoder dec(params, enc, opts.max_len + 1);

  struct Live {
    std::vector<int> gen;  // generated ids, no <s>
    double log_prob = 0.0;
  };
  std::vector<Live> live(1);  // only the first row is active at step 0
  std::vector<Hypothesis> completed;

  auto better = [](const Hypothesis& a, const Hypothesis& b) {
    if (a.normalized_score != b.normalized_score) return a.normalized_score > b.normalized_score;
    return a.tokens < b.tokens;
  };

  for (int t = 0; t < opts.max_len && !live.empty(); ++t) {
    std::vector<int> step_tokens(static_cast<size_t>(dec.batch()), kBosId);
    for (size_t i = 0; i < live.size(); ++i)
      step_tokens[i] = live[i].gen.empty() ? kBosId : live[i].gen.back();
    TensorData<float> logits = dec.step(step_tokens);
    masked_log_probs(logits);

    struct Cand {
      double log_prob;
      int parent;
      int token;
    };
    std::vector<Cand> cands;
    cands.reserve(live.size() * static_cast<size_t>(vocab));
    for (size_t i = 0; i < live.size(); ++i) {
      const float* row = logits.ptr() + static_cast<int64_t>(i) * vocab;
      for (int j = 0; j < vocab; ++j)
        if (std::isfinite(row[j])) cands.push_back({live[i].log_prob + row[j], static_cast<int>(i), j});
    }
    size_t keep = std::min(cands.size(), static_cast<size_t>(beam));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<int64_t>(keep), cands.end(),
                      [&](const Cand& a, const Cand& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });

    std::vector<Live> next;
    std::vector<int> parents;
    for (size_t c = 0; c < keep; ++c) {
      const Cand& cand = cands[c];
      std::vector<int> gen = live[static_cast<size_t>(cand.parent)].gen;
      gen.push_back(cand.token);
      if (cand.token == kEosId) {
        Hypothesis h;
        h.tokens.push_back(kBosId);
        h.tokens.insert(h.tokens.end(), gen.begin(), gen.end());
        h.log_prob = cand.log_prob;
        h.normalized_score = normalized(cand.log_prob, static_cast<int>(gen.size()), opts.len_penalty);
        completed.push_back(std::move(h));
      } else {
        next.push_back({std::move(gen), cand.log_prob});
        parents.push_back(cand.parent);
      }
    }

    // Finished-pool pruning: once `beam` hypotheses are complete, stop when
    // the best live score (finished now) cannot beat the worst kept one.
    if (static_cast<int>(completed.size()) >= beam && !next.empty()) {
      std::sort(completed.begin(), completed.end(), better);
      completed.resize(static_cast<size_t>(beam));
      double worst = completed.back().normalized_score;
      double best_live = -std::numeric_limits<double>::infinity();
      for (const Live& l : next)
        best_live = std::max(best_live, normalized(l.log_prob, static_cast<int>(l.gen.size()),
                                                   opts.len_penalty));
      if (best_live <= worst) {
        next.clear();
        parents.clear();
      }
    }

    if (!next.empty()) {
      // Pad the reorder list so the decoder batch stays `beam` wide.
      std::vector<int> full = parents;
      while (static_cast<int>(full.size()) < beam) full.push_back(parents.empty() ? 0 : parents[0]);
      dec.reorder(full);
    }
    live = std::move(next);
  }

  // Hypotheses still live at max_len are completed without eos.
  for (Live& l : live) {
    Hypothesis h;
    h.tokens.push_back(kBosId);
    h.tokens.insert(h.tokens.end(), l.gen.begin(), l.gen.end());
    h.log_prob = l.log_prob;
    h.normalized_score = normalized(l.log_prob, static_cast<int>(l.gen.size()), opts.len_penalty);
    completed.push_back(std::move(h));
  }

  std::sort(completed.begin(), completed.end(), better);
  if (static_cast<int>(completed.size()) > beam) completed.resize(static_cast<size_t>(beam));
  if (completed.empty()) {
    Hypothesis h;
    h.tokens = {kBosId, kEosId};
    h.log_prob = 0.0;
    h.normalized_score = 0.0;
    completed.push_back(std::move(h));
  }
  return completed;
}

std::vector<Hypothesis> decode_corpus(const ModelParams<float>& params,
                                      const std::vector<TensorData<float>>& feats,
                                      const DecodeOptions& opts) {
  std::vector<Hypothesis> out(feats.size());
  int64_t n = static_cast<int64_t>(feats.size());
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < n; ++i)
    out[static_cast<size_t>(i)] = beam_search(params, feats[static_cast<size_t>(i)], opts).front();
  return out;
}

std::vector<std::string> translate_corpus(const ModelParams<float>& params, const TokenizerModel& tokenizer,
                                          const CasingModel& truecaser,
                                          const std::vector<TensorData<float>>& feats,
                                          const DecodeOptions& opts) {
  std::vector<Hypothesis> hyps = decode_corpus(params, feats, opts);
  std::vector<std::string> out;
  out.reserve(hyps.size());
  for (const Hypothesis& h : hyps) out.push_back(truecase(truecaser, detokenize(tokenizer, h.tokens)));
  return out;
}

}  // namespace slt
