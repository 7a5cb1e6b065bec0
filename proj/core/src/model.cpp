#include "slt/model.hpp"

#include "slt/rng.hpp"

namespace slt {

void ModelConfig::validate() const {
  if (embed_dim <= 0 || ffn_dim <= 0 || attention_heads <= 0 || feature_dim <= 0 || vocab_size <= 0 ||
      encoder_layers < 0 || decoder_layers < 0 || max_source_positions <= 0 || max_target_positions <= 0)
    throw InvalidConfig("all model dimensions must be positive");
  if (embed_dim % attention_heads != 0)
    throw InvalidConfig("embed_dim " + std::to_string(embed_dim) + " not divisible by attention_heads " +
                        std::to_string(attention_heads));
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidConfig("dropout must be in [0,1)");
}

int64_t count_params(const ModelConfig& cfg) {
  int64_t d = cfg.embed_dim, f = cfg.ffn_dim;
  int64_t attn = 4 * (d * d + d);
  int64_t ln = 2 * d;
  int64_t ffn = d * f + f + f * d + d;
  int64_t total = (cfg.feature_dim + 1) * d;                        // input projection
  total += static_cast<int64_t>(cfg.vocab_size) * d;                // tied target embedding
  total += cfg.encoder_layers * (attn + 2 * ln + ffn);
  if (cfg.encoder_layers > 0) total += ln;                          // final encoder norm
  total += cfg.decoder_layers * (2 * attn + 3 * ln + ffn);
  if (cfg.decoder_layers > 0) total += ln;                          // final decoder norm
  return total;
}

namespace {

class ParamBuilder {
 public:
  ParamBuilder(ModelParams<float>& params, uint64_t seed) : params_(params), rng_(seed) {}

  // uniform(-sqrt(6/(fan_in+fan_out)), +...)
  void weight(const std::string& name, int fan_in, int fan_out) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    TensorData<float> t(Shape{fan_in, fan_out});
    for (float& v : t.data) v = static_cast<float>(rng_.uniform(-bound, bound));
    put(name, std::move(t));
  }

  void embedding(const std::string& name, int vocab, int dim) {
    double sigma = 1.0 / std::sqrt(static_cast<double>(dim));
    TensorData<float> t(Shape{vocab, dim});
    for (float& v : t.data) v = static_cast<float>(rng_.gauss() * sigma);
    put(name, std::move(t));
  }

  void fill(const std::string& name, int dim, float value) {
    put(name, TensorData<float>(Shape{dim}, value));
  }

  void linear(const std::string& prefix, int fan_in, int fan_out) {
    weight(prefix + ".weight", fan_in, fan_out);
    fill(prefix + ".bias", fan_out, 0.0f);
  }

  void attention(const std::string& prefix, int d) {
    linear(prefix + ".q_proj", d, d);
    linear(prefix + ".k_proj", d, d);
    linear(prefix + ".v_proj", d, d);
    linear(prefix + ".out_proj", d, d);
  }

  void norm(const std::string& prefix, int d) {
    fill(prefix + ".gain", d, 1.0f);
    fill(prefix + ".bias", d, 0.0f);
  }

  void ffn(const std::string& prefix, int d, int f) {
    weight(prefix + ".w1", d, f);
    fill(prefix + ".b1", f, 0.0f);
    weight(prefix + ".w2", f, d);
    fill(prefix + ".b2", d, 0.0f);
  }

 private:
  void put(const std::string& name, TensorData<float> t) {
    params_.names.push_back(name);
    params_.tensors.emplace(name, std::move(t));
  }

  ModelParams<float>& params_;
  Rng rng_;
};

}  // namespace

ModelParams<float> build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelParams<float> params;
  params.cfg = cfg;
  ParamBuilder b(params, seed);

  b.linear("input_proj", cfg.feature_dim, cfg.embed_dim);
  b.embedding("target_embed.weight", cfg.vocab_size, cfg.embed_dim);

  for (int l = 0; l < cfg.encoder_layers; ++l) {
    std::string prefix = "encoder." + std::to_string(l);
    b.norm(prefix + ".self_attn_norm", cfg.embed_dim);
    b.attention(prefix + ".self_attn", cfg.embed_dim);
    b.norm(prefix + ".ffn_norm", cfg.embed_dim);
    b.ffn(prefix + ".ffn", cfg.embed_dim, cfg.ffn_dim);
  }
  if (cfg.encoder_layers > 0) b.norm("encoder.final_norm", cfg.embed_dim);

  for (int l = 0; l < cfg.decoder_layers; ++l) {
    std::string prefix = "decoder." + std::to_string(l);
    b.norm(prefix + ".self_attn_norm", cfg.embed_dim);
    b.attention(prefix + ".self_attn", cfg.embed_dim);
    b.norm(prefix + ".cross_attn_norm", cfg.embed_dim);
    b.attention(prefix + ".cross_attn", cfg.embed_dim);
    b.norm(prefix + ".ffn_norm", cfg.embed_dim);
    b.ffn(prefix + ".ffn", cfg.embed_dim, cfg.ffn_dim);
  }
  if (cfg.decoder_layers > 0) b.norm("decoder.final_norm", cfg.embed_dim);

  return params;
}

}  // namespace slt
