#pragma once

#include <vector>

#include "slt/model.hpp"
#include "slt/tensor.hpp"

namespace slt {

struct EncodedBatch {
  TensorData<float> memory;  // [B, T, d]
  std::vector<int> src_lens;
};

// Encoder forward without gradients or dropout.
EncodedBatch encode_for_inference(const ModelParams<float>& params, const TensorData<float>& feats,
                                  const std::vector<int>& src_lens);

// Replicates each row of an encoded batch `times` times (beam expansion).
EncodedBatch replicate_rows(const EncodedBatch& enc, int times);

// Step-wise decoder with per-layer self-attention K/V caches and precomputed
// cross-attention keys/values. Shares the arithmetic kernels with the
// training path.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const ModelParams<float>& params, const EncodedBatch& enc, int max_steps);

  // Feeds one token per row (step 0 expects <s>) and returns logits [B, V].
  TensorData<float> step(const std::vector<int>& tokens);

  // Reorders rows so that new row r continues old row parents[r].
  void reorder(const std::vector<int>& parents);

  int batch() const { return batch_; }
  int steps_taken() const { return step_; }

 private:
  struct LayerCache {
    std::vector<float> self_k, self_v;    // [B, max_steps, d]
    std::vector<float> cross_k, cross_v;  // [B, T_src, d]
  };

  void attend_cached(const float* q, const float* keys, const float* values, int b, int positions,
                     int stride, float* out) const;

  const ModelParams<float>& params_;
  ModelConfig cfg_;
  int batch_;
  int src_len_;
  std::vector<int> src_lens_;
  int max_steps_;
  int step_ = 0;
  std::vector<LayerCache> layers_;
  TensorData<float> positions_;  // [max_steps, d]
};

}  // namespace slt
