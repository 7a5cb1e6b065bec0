#include "slt/inference.hpp"

#include <cmath>

#include "slt/autodiff.hpp"
#include "slt/kernels.hpp"

namespace slt {

EncodedBatch encode_for_inference(const ModelParams<float>& params, const TensorData<float>& feats,
                                  const std::vector<int>& src_lens) {
  Graph<float> g;
  ParamVars<float> pv = register_params(g, params, /*requires_grad=*/false);
  DropoutPlan plan;  // disabled
  Var<float> memory = encode_features(g, pv, params.cfg, feats, src_lens, plan);
  return EncodedBatch{memory.value(), src_lens};
}

EncodedBatch replicate_rows(const EncodedBatch& enc, int times) {
  int b = enc.memory.dim(0), t = enc.memory.dim(1), d = enc.memory.dim(2);
  EncodedBatch out;
  out.memory = TensorData<float>(Shape{b * times, t, d});
  int64_t row = static_cast<int64_t>(t) * d;
  for (int i = 0; i < b; ++i)
    for (int r = 0; r < times; ++r) {
      std::copy_n(enc.memory.ptr() + i * row, row, out.memory.ptr() + (i * times + r) * row);
      out.src_lens.push_back(enc.src_lens[static_cast<size_t>(i)]);
    }
  return out;
}

namespace {

void linear_rows(int64_t rows, int64_t in_dim, int64_t out_dim, const float* x, const TensorData<float>& w,
                 const TensorData<float>& b, float* y) {
  kernels::gemm_nn(rows, in_dim, out_dim, x, w.ptr(), y, false);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < out_dim; ++j) y[r * out_dim + j] += b.ptr()[j];
}

void layer_norm_inplace(int64_t rows, int64_t d, const float* x, const TensorData<float>& gain,
                        const TensorData<float>& bias, float* y) {
  kernels::layer_norm_rows<float>(rows, d, x, gain.ptr(), bias.ptr(), 1e-5f, y, nullptr, nullptr);
}

}  // namespace

IncrementalDecoder::IncrementalDecoder(const ModelParams<float>& params, const EncodedBatch& enc,
                                       int max_steps)
    : params_(params),
      cfg_(params.cfg),
      batch_(enc.memory.dim(0)),
      src_len_(enc.memory.dim(1)),
      src_lens_(enc.src_lens),
      max_steps_(max_steps),
      positions_(sinusoidal_positions<float>(max_steps, params.cfg.embed_dim)) {
  int d = cfg_.embed_dim;
  int64_t rows = static_cast<int64_t>(batch_) * src_len_;
  layers_.resize(static_cast<size_t>(cfg_.decoder_layers));
  for (int l = 0; l < cfg_.decoder_layers; ++l) {
    LayerCache& lc = layers_[static_cast<size_t>(l)];
    lc.self_k.assign(static_cast<size_t>(batch_) * max_steps_ * d, 0.0f);
    lc.self_v.assign(static_cast<size_t>(batch_) * max_steps_ * d, 0.0f);
    lc.cross_k.resize(static_cast<size_t>(rows) * d);
    lc.cross_v.resize(static_cast<size_t>(rows) * d);
    std::string prefix = "decoder." + std::to_string(l) + ".cross_attn";
    linear_rows(rows, d, d, enc.memory.ptr(), params_.at(prefix + ".k_proj.weight"),
                params_.at(prefix + ".k_proj.bias"), lc.cross_k.data());
    linear_rows(rows, d, d, enc.memory.ptr(), params_.at(prefix + ".v_proj.weight"),
                params_.at(prefix + ".v_proj.bias"), lc.cross_v.data());
  }
}

// Single-query multi-head attention over `positions` cached key/value rows of
// batch row b laid out with `stride` floats per position.
void IncrementalDecoder::attend_cached(const float* q, const float* keys, const float* values, int b,
                                       int positions, int stride, float* out) const {
  int d = cfg_.embed_dim;
  int heads = cfg_.attention_heads;
  int dh = d / heads;
  float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<float> scores(static_cast<size_t>(positions));
  for (int h = 0; h < heads; ++h) {
    const float* qh = q + h * dh;
    for (int p = 0; p < positions; ++p) {
      const float* kh = keys + (static_cast<int64_t>(b) * stride + p) * d + h * dh;
      float s = 0.0f;
      for (int j = 0; j < dh; ++j) s += qh[j] * kh[j];
      scores[static_cast<size_t>(p)] = s * inv_sqrt;
    }
    float* oh = out + h * dh;
    std::fill(oh, oh + dh, 0.0f);
    if (positions == 0) continue;  // fully padded memory attends to nothing
    float max_s = scores[0];
    for (int p = 1; p < positions; ++p) max_s = std::max(max_s, scores[static_cast<size_t>(p)]);
    float sum = 0.0f;
    for (int p = 0; p < positions; ++p) {
      scores[static_cast<size_t>(p)] = std::exp(scores[static_cast<size_t>(p)] - max_s);
      sum += scores[static_cast<size_t>(p)];
    }
    float inv = 1.0f / sum;
    for (int p = 0; p < positions; ++p) {
      float a = scores[static_cast<size_t>(p)] * inv;
      const float* vh = values + (static_cast<int64_t>(b) * stride + p) * d + h * dh;
      for (int j = 0; j < dh; ++j) oh[j] += a * vh[j];
    }
  }
}

TensorData<float> IncrementalDecoder::step(const std::vector<int>& tokens) {
  if (static_cast<int>(tokens.size()) != batch_)
    throw ShapeMismatch("incremental step expects " + std::to_string(batch_) + " tokens, got " +
                        std::to_string(tokens.size()));
  if (step_ >= max_steps_) throw SequenceTooLong("incremental decoder exceeded " + std::to_string(max_steps_));
  int d = cfg_.embed_dim;
  int t = step_;
  float embed_scale = std::sqrt(static_cast<float>(d));

  const TensorData<float>& embed = params_.at("target_embed.weight");
  TensorData<float> x(Shape{batch_, d});
  for (int b = 0; b < batch_; ++b) {
    int id = tokens[static_cast<size_t>(b)];
    if (id < 0 || id >= cfg_.vocab_size)
      throw BadTarget("token id " + std::to_string(id) + " outside vocab " + std::to_string(cfg_.vocab_size));
    const float* e = embed.ptr() + static_cast<int64_t>(id) * d;
    const float* pos = positions_.ptr() + static_cast<int64_t>(t) * d;
    float* xr = x.ptr() + static_cast<int64_t>(b) * d;
    for (int j = 0; j < d; ++j) xr[j] = e[j] * embed_scale + pos[j];
  }

  TensorData<float> h(Shape{batch_, d}), proj(Shape{batch_, d}), ctx(Shape{batch_, d});
  for (int l = 0; l < cfg_.decoder_layers; ++l) {
    LayerCache& lc = layers_[static_cast<size_t>(l)];
    std::string prefix = "decoder." + std::to_string(l);

    // self-attention, appending this step's k/v to the cache
    layer_norm_inplace(batch_, d, x.ptr(), params_.at(prefix + ".self_attn_norm.gain"),
                       params_.at(prefix + ".self_attn_norm.bias"), h.ptr());
    std::vector<float> q(static_cast<size_t>(batch_) * d);
    linear_rows(batch_, d, d, h.ptr(), params_.at(prefix + ".self_attn.q_proj.weight"),
                params_.at(prefix + ".self_attn.q_proj.bias"), q.data());
    linear_rows(batch_, d, d, h.ptr(), params_.at(prefix + ".self_attn.k_proj.weight"),
                params_.at(prefix + ".self_attn.k_proj.bias"), proj.ptr());
    for (int b = 0; b < batch_; ++b)
      std::copy_n(proj.ptr() + static_cast<int64_t>(b) * d, d,
                  lc.self_k.data() + (static_cast<int64_t>(b) * max_steps_ + t) * d);
    linear_rows(batch_, d, d, h.ptr(), params_.at(prefix + ".self_attn.v_proj.weight"),
                params_.at(prefix + ".self_attn.v_proj.bias"), proj.ptr());
    for (int b = 0; b < batch_; ++b)
      std::copy_n(proj.ptr() + static_cast<int64_t>(b) * d, d,
                  lc.self_v.data() + (static_cast<int64_t>(b) * max_steps_ + t) * d);
    for (int b = 0; b < batch_; ++b)
      attend_cached(q.data() + static_cast<int64_t>(b) * d, lc.self_k.data(), lc.self_v.data(), b, t + 1,
                    max_steps_, ctx.ptr() + static_cast<int64_t>(b) * d);
    linear_rows(batch_, d, d, ctx.ptr(), params_.at(prefix + ".self_attn.out_proj.weight"),
                params_.at(prefix + ".self_attn.out_proj.bias"), proj.ptr());
    for (int64_t i = 0; i < x.numel(); ++i) x.data[static_cast<size_t>(i)] += proj.data[static_cast<size_t>(i)];

    // cross-attention over the precomputed memory keys/values
    layer_norm_inplace(batch_, d, x.ptr(), params_.at(prefix + ".cross_attn_norm.gain"),
                       params_.at(prefix + ".cross_attn_norm.bias"), h.ptr());
    linear_rows(batch_, d, d, h.ptr(), params_.at(prefix + ".cross_attn.q_proj.weight"),
                params_.at(prefix + ".cross_attn.q_proj.bias"), q.data());
    for (int b = 0; b < batch_; ++b)
      attend_cached(q.data() + static_cast<int64_t>(b) * d, lc.cross_k.data(), lc.cross_v.data(), b,
                    src_lens_[static_cast<size_t>(b)], src_len_, ctx.ptr() + static_cast<int64_t>(b) * d);
    linear_rows(batch_, d, d, ctx.ptr(), params_.at(prefix + ".cross_attn.out_proj.weight"),
                params_.at(prefix + ".cross_attn.out_proj.bias"), proj.ptr());
    for (int64_t i = 0; i < x.numel(); ++i) x.data[static_cast<size_t>(i)] += proj.data[static_cast<size_t>(i)];

    // feed-forward
    layer_norm_inplace(batch_, d, x.ptr(), params_.at(prefix + ".ffn_norm.gain"),
                       params_.at(prefix + ".ffn_norm.bias"), h.ptr());
    std::vector<float> mid(static_cast<size_t>(batch_) * cfg_.ffn_dim);
    linear_rows(batch_, d, cfg_.ffn_dim, h.ptr(), params_.at(prefix + ".ffn.w1"),
                params_.at(prefix + ".ffn.b1"), mid.data());
    for (float& v : mid)
      if (v < 0.0f) v = 0.0f;
    linear_rows(batch_, cfg_.ffn_dim, d, mid.data(), params_.at(prefix + ".ffn.w2"),
                params_.at(prefix + ".ffn.b2"), proj.ptr());
    for (int64_t i = 0; i < x.numel(); ++i) x.data[static_cast<size_t>(i)] += proj.data[static_cast<size_t>(i)];
  }

  if (cfg_.decoder_layers > 0)
    layer_norm_inplace(batch_, d, x.ptr(), params_.at("decoder.final_norm.gain"),
                       params_.at("decoder.final_norm.bias"), h.ptr());
  else
    h = x;

  TensorData<float> logits(Shape{batch_, cfg_.vocab_size});
  kernels::gemm_nt(batch_, d, cfg_.vocab_size, h.ptr(), embed.ptr(), logits.ptr(), false);
  step_ += 1;
  return logits;
}

void IncrementalDecoder::reorder(const std::vector<int>& parents) {
  int d = cfg_.embed_dim;
  int new_batch = static_cast<int>(parents.size());
  for (LayerCache& lc : layers_) {
    std::vector<float> sk(static_cast<size_t>(new_batch) * max_steps_ * d);
    std::vector<float> sv(static_cast<size_t>(new_batch) * max_steps_ * d);
    std::vector<float> ck(static_cast<size_t>(new_batch) * src_len_ * d);
    std::vector<float> cv(static_cast<size_t>(new_batch) * src_len_ * d);
    int64_t self_row = static_cast<int64_t>(max_steps_) * d;
    int64_t cross_row = static_cast<int64_t>(src_len_) * d;
    for (int r = 0; r < new_batch; ++r) {
      int p = parents[static_cast<size_t>(r)];
      std::copy_n(lc.self_k.data() + p * self_row, self_row, sk.data() + r * self_row);
      std::copy_n(lc.self_v.data() + p * self_row, self_row, sv.data() + r * self_row);
      std::copy_n(lc.cross_k.data() + p * cross_row, cross_row, ck.data() + r * cross_row);
      std::copy_n(lc.cross_v.data() + p * cross_row, cross_row, cv.data() + r * cross_row);
    }
    lc.self_k = std::move(sk);
    lc.self_v = std::move(sv);
    lc.cross_k = std::move(ck);
    lc.cross_v = std::move(cv);
  }
  std::vector<int> lens(static_cast<size_t>(new_batch));
  for (int r = 0; r < new_batch; ++r) lens[static_cast<size_t>(r)] = src_lens_[static_cast<size_t>(parents[static_cast<size_t>(r)])];
  src_lens_ = std::move(lens);
  batch_ = new_batch;
}

}  // namespace slt
