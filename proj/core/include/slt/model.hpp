#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "slt/autodiff.hpp"
#include "slt/tensor.hpp"
#include "slt/textproc.hpp"

namespace slt {

// Hyperparameters of the asymmetric encoder-decoder. Defaults are the tuned
// configuration the toolkit trains by default.
struct ModelConfig {
  int encoder_layers = 6;
  int decoder_layers = 3;
  int embed_dim = 256;
  int ffn_dim = 1024;
  int attention_heads = 4;
  int feature_dim = 1024;
  int vocab_size = 0;
  double dropout = 0.3;
  int max_source_positions = 1024;
  int max_target_positions = 256;

  void validate() const;
};

int64_t count_params(const ModelConfig& cfg);

// Named parameter tensors in a fixed creation order (the checkpoint order).
template <typename T>
struct ModelParams {
  ModelConfig cfg;
  std::vector<std::string> names;
  std::unordered_map<std::string, TensorData<T>> tensors;

  TensorData<T>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("unknown parameter " + name);
    return it->second;
  }
  const TensorData<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("unknown parameter " + name);
    return it->second;
  }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& name : names) n += at(name).numel();
    return n;
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.cfg = cfg;
    out.names = names;
    for (const auto& name : names) out.tensors.emplace(name, at(name).template cast<U>());
    return out;
  }
};

ModelParams<float> build_model(const ModelConfig& cfg, uint64_t seed);

// Sinusoidal position table rows [0, positions).
template <typename T>
TensorData<T> sinusoidal_positions(int positions, int dim);

// ---------------------------------------------------------------------------
// Graph forward (training / gradient checking path)

template <typename T>
struct ParamVars {
  std::unordered_map<std::string, Var<T>> vars;
  Var<T> at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw DataError("unknown parameter " + name);
    return it->second;
  }
};

template <typename T>
ParamVars<T> register_params(Graph<T>& g, const ModelParams<T>& params, bool requires_grad) {
  ParamVars<T> pv;
  for (const auto& name : params.names) pv.vars.emplace(name, g.leaf(params.at(name), requires_grad));
  return pv;
}

// Deterministic dropout keying: every dropout site in a forward pass draws a
// fresh tag, and masks depend only on (seed, step, tag, element).
struct DropoutPlan {
  double p = 0.0;
  uint64_t seed = 0;
  int64_t step = 0;
  bool enabled = false;

  mutable int tag = 0;
  uint64_t next_key() const { return hash_u64(seed, static_cast<uint64_t>(step), static_cast<uint64_t>(tag++)); }
  double rate() const { return enabled ? p : 0.0; }
};

template <typename T>
Var<T> encode_features(Graph<T>& g, const ParamVars<T>& pv, const ModelConfig& cfg,
                       const TensorData<T>& feats, const std::vector<int>& src_lens,
                       const DropoutPlan& plan);

template <typename T>
Var<T> decode_logits(Graph<T>& g, const ParamVars<T>& pv, const ModelConfig& cfg, Var<T> memory,
                     const std::vector<int>& src_lens, const std::vector<int>& prev_tokens, int batch,
                     int prev_len, const DropoutPlan& plan);

// Single pre-norm encoder layer, exposed for block-level tests.
template <typename T>
Var<T> encoder_layer(Graph<T>& g, const ParamVars<T>& pv, const ModelConfig& cfg, const std::string& prefix,
                     Var<T> x, const std::vector<int>& key_lens, const DropoutPlan& plan);

// ---------------------------------------------------------------------------
// implementation

namespace model_detail {

// Validity mask for attention: key j of batch b is attendable by query i iff
// j < key_lens[b] and (when causal) j <= i.
inline std::shared_ptr<std::vector<uint8_t>> attention_mask(int batch, int heads, int q_len, int k_len,
                                                            const std::vector<int>& key_lens, bool causal) {
  auto mask = std::make_shared<std::vector<uint8_t>>(
      static_cast<size_t>(batch) * heads * q_len * k_len, uint8_t{0});
  uint8_t* m = mask->data();
  for (int b = 0; b < batch; ++b) {
    int len = key_lens.empty() ? k_len : key_lens[static_cast<size_t>(b)];
    for (int h = 0; h < heads; ++h)
      for (int i = 0; i < q_len; ++i) {
        uint8_t* row = m + (((static_cast<size_t>(b) * heads + h) * q_len + i) * k_len);
        int hi = causal ? std::min(len, i + 1) : len;
        for (int j = 0; j < hi; ++j) row[j] = 1;
      }
  }
  return mask;
}

template <typename T>
Var<T> linear(const ParamVars<T>& pv, const std::string& prefix, Var<T> x) {
  return add(matmul(x, pv.at(prefix + ".weight")), pv.at(prefix + ".bias"));
}

template <typename T>
Var<T> multihead_attention(const ParamVars<T>& pv, const ModelConfig& cfg, const std::string& prefix,
                           Var<T> query, Var<T> kv, int batch, int q_len, int k_len,
                           const std::vector<int>& key_lens, bool causal) {
  int d = cfg.embed_dim;
  int heads = cfg.attention_heads;
  int dh = d / heads;

  auto split_heads = [&](Var<T> flat, int len) {
    Var<T> r = reshape(flat, Shape{batch, len, heads, dh});
    r = permute(r, {0, 2, 1, 3});
    return reshape(r, Shape{batch * heads, len, dh});
  };

  Var<T> q = split_heads(linear(pv, prefix + ".q_proj", reshape(query, Shape{batch * q_len, d})), q_len);
  Var<T> k = split_heads(linear(pv, prefix + ".k_proj", reshape(kv, Shape{batch * k_len, d})), k_len);
  Var<T> v = split_heads(linear(pv, prefix + ".v_proj", reshape(kv, Shape{batch * k_len, d})), k_len);

  Var<T> scores = scale(matmul(q, k, /*transpose_b=*/true), 1.0 / std::sqrt(static_cast<double>(dh)));
  Var<T> att = softmax_lastdim(scores, attention_mask(batch, heads, q_len, k_len, key_lens, causal));
  Var<T> ctx = matmul(att, v);  // [B*H, q_len, dh]
  ctx = reshape(ctx, Shape{batch, heads, q_len, dh});
  ctx = permute(ctx, {0, 2, 1, 3});
  ctx = reshape(ctx, Shape{batch * q_len, d});
  Var<T> out = linear(pv, prefix + ".out_proj", ctx);
  return reshape(out, Shape{batch, q_len, d});
}

template <typename T>
Var<T> ffn_block(const ParamVars<T>& pv, const std::string& prefix, Var<T> x, int rows, int d) {
  Var<T> h = reshape(x, Shape{rows, d});
  h = relu(add(matmul(h, pv.at(prefix + ".w1")), pv.at(prefix + ".b1")));
  h = add(matmul(h, pv.at(prefix + ".w2")), pv.at(prefix + ".b2"));
  return h;
}

template <typename T>
Var<T> norm(const ParamVars<T>& pv, const std::string& prefix, Var<T> x) {
  return layer_norm(x, pv.at(prefix + ".gain"), pv.at(prefix + ".bias"));
}

}  // namespace model_detail

template <typename T>
Var<T> encoder_layer(Graph<T>& g, const ParamVars<T>& pv, const ModelConfig& cfg, const std::string& prefix,
                     Var<T> x, const std::vector<int>& key_lens, const DropoutPlan& plan) {
  using namespace model_detail;
  int batch = x.shape()[0], len = x.shape()[1], d = cfg.embed_dim;
  Var<T> h = norm(pv, prefix + ".self_attn_norm", x);
  h = multihead_attention(pv, cfg, prefix + ".self_attn", h, h, batch, len, len, key_lens, false);
  x = add(x, dropout(reshape(h, x.shape()), plan.rate(), plan.next_key()));
  h = norm(pv, prefix + ".ffn_norm", x);
  h = ffn_block(pv, prefix + ".ffn", h, batch * len, d);
  return add(x, dropout(reshape(h, x.shape()), plan.rate(), plan.next_key()));
}

template <typename T>
Var<T> encode_features(Graph<T>& g, const ParamVars<T>& pv, const ModelConfig& cfg,
                       const TensorData<T>& feats, const std::vector<int>& src_lens,
                       const DropoutPlan& plan) {
  using namespace model_detail;
  if (feats.rank() != 3 || feats.dim(2) != cfg.feature_dim)
    throw FeatureDimMismatch("features " + shape_str(feats.shape) + " for feature_dim " +
                             std::to_string(cfg.feature_dim));
  int batch = feats.dim(0), t_len = feats.dim(1), d = cfg.embed_dim;
  if (t_len > cfg.max_source_positions)
    throw SequenceTooLong("source length " + std::to_string(t_len) + " exceeds max_source_positions " +
                          std::to_string(cfg.max_source_positions));

  Var<T> x = g.constant(feats);
  x = reshape(x, Shape{batch * t_len, cfg.feature_dim});
  x = linear(pv, "input_proj", x);
  x = scale(x, std::sqrt(static_cast<double>(d)));
  x = reshape(x, Shape{batch, t_len, d});
  x = add(x, g.constant(sinusoidal_positions<T>(t_len, d)));
  x = dropout(x, plan.rate(), plan.next_key());

  for (int l = 0; l < cfg.encoder_layers; ++l)
    x = encoder_layer(g, pv, cfg, "encoder." + std::to_string(l), x, src_lens, plan);
  if (cfg.encoder_layers > 0) x = norm(pv, "encoder.final_norm", x);
  return x;
}

template <typename T>
Var<T> decode_logits(Graph<T>& g, const ParamVars<T>& pv, const ModelConfig& cfg, Var<T> memory,
                     const std::vector<int>& src_lens, const std::vector<int>& prev_tokens, int batch,
                     int prev_len, const DropoutPlan& plan) {
  using namespace model_detail;
  int d = cfg.embed_dim;
  if (static_cast<int>(prev_tokens.size()) != batch * prev_len)
    throw ShapeMismatch("prev_tokens size " + std::to_string(prev_tokens.size()) + " for batch " +
                        std::to_string(batch) + " x " + std::to_string(prev_len));
  if (prev_len > cfg.max_target_positions)
    throw SequenceTooLong("target length " + std::to_string(prev_len) + " exceeds max_target_positions " +
                          std::to_string(cfg.max_target_positions));
  for (int b = 0; b < batch; ++b)
    if (prev_tokens[static_cast<size_t>(b) * prev_len] != kBosId)
      throw DataError("decoder input row " + std::to_string(b) + " does not begin with <s>");
  int src_len = memory.shape()[1];

  auto ids = std::make_shared<std::vector<int>>(prev_tokens);
  Var<T> x = embedding(pv.at("target_embed.weight"), ids, Shape{batch, prev_len});
  x = scale(x, std::sqrt(static_cast<double>(d)));
  x = add(x, g.constant(sinusoidal_positions<T>(prev_len, d)));
  x = dropout(x, plan.rate(), plan.next_key());

  std::vector<int> no_lens;  // decoder self-attention: causal only
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    std::string prefix = "decoder." + std::to_string(l);
    Var<T> h = norm(pv, prefix + ".self_attn_norm", x);
    h = multihead_attention(pv, cfg, prefix + ".self_attn", h, h, batch, prev_len, prev_len, no_lens,
                            true);
    x = add(x, dropout(h, plan.rate(), plan.next_key()));
    h = norm(pv, prefix + ".cross_attn_norm", x);
    h = multihead_attention(pv, cfg, prefix + ".cross_attn", h, memory, batch, prev_len, src_len,
                            src_lens, false);
    x = add(x, dropout(h, plan.rate(), plan.next_key()));
    h = norm(pv, prefix + ".ffn_norm", x);
    h = ffn_block(pv, prefix + ".ffn", h, batch * prev_len, d);
    x = add(x, dropout(reshape(h, x.shape()), plan.rate(), plan.next_key()));
  }
  if (cfg.decoder_layers > 0) x = norm(pv, "decoder.final_norm", x);

  // Output projection tied to the target embedding (no bias).
  Var<T> flat = reshape(x, Shape{batch * prev_len, d});
  Var<T> logits = matmul(flat, pv.at("target_embed.weight"), /*transpose_b=*/true);
  return reshape(logits, Shape{batch, prev_len, cfg.vocab_size});
}

template <typename T>
TensorData<T> sinusoidal_positions(int positions, int dim) {
  TensorData<T> table(Shape{positions, dim});
  for (int p = 0; p < positions; ++p) {
    T* row = table.ptr() + static_cast<int64_t>(p) * dim;
    for (int j = 0; j + 1 < dim; j += 2) {
      double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(dim));
      row[j] = static_cast<T>(std::sin(p * freq));
      row[j + 1] = static_cast<T>(std::cos(p * freq));
    }
    if (dim % 2 == 1) {
      double freq = std::exp(-std::log(10000.0) * static_cast<double>(dim - 1) / static_cast<double>(dim));
      row[dim - 1] = static_cast<T>(std::sin(p * freq));
    }
  }
  return table;
}

}  // namespace slt
