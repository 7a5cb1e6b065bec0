#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "slt/errors.hpp"
#include "slt/kernels.hpp"
#include "slt/rng.hpp"
#include "slt/tensor.hpp"

namespace slt {

template <typename T>
class Graph;

template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const TensorData<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return value().shape; }
};

// Reverse-mode tape. Nodes are appended in forward order; backward() walks
// them once in reverse topological order, accumulating gradients additively
// at fan-out.
template <typename T>
class Graph {
 public:
  Var<T> leaf(TensorData<T> value, bool requires_grad = false) {
    return make(std::move(value), requires_grad, nullptr);
  }

  Var<T> constant(TensorData<T> value) { return leaf(std::move(value), false); }

  // The node being created receives id == size(); backward lambdas capture it.
  Var<T> make(TensorData<T> value, bool requires_grad, std::function<void(Graph&)> backward) {
#ifndef NDEBUG
    if (!all_finite(value)) throw NumericError("non-finite value produced at node " + std::to_string(size()));
#endif
    nodes_.push_back(Node{std::move(value), {}, requires_grad, false,
                          requires_grad ? std::move(backward) : nullptr});
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  int size() const { return static_cast<int>(nodes_.size()); }

  const TensorData<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  bool grad_ready(int id) const { return nodes_[static_cast<size_t>(id)].grad_ready; }
  const TensorData<T>& grad_of(int id) const { return nodes_[static_cast<size_t>(id)].grad; }

  // Gradient accumulation buffer, zero-initialized on first touch.
  TensorData<T>& grad_buffer(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_ready) {
      n.grad = TensorData<T>(n.value.shape);
      n.grad_ready = true;
    }
    return n.grad;
  }

  void backward(Var<T> loss) {
    if (value(loss.id).numel() != 1)
      throw NotScalar("backward requires a scalar loss, got shape " + shape_str(value(loss.id).shape));
    grad_buffer(loss.id).data[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.requires_grad || !n.grad_ready || !n.backward) continue;
      n.backward(*this);
    }
  }

 private:
  struct Node {
    TensorData<T> value;
    TensorData<T> grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::function<void(Graph&)> backward;
  };

  std::deque<Node> nodes_;
};

namespace detail {

template <typename T>
void axpy(T* dst, const T* src, int64_t n, T scale = T(1)) {
  for (int64_t i = 0; i < n; ++i) dst[i] += scale * src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul over rank-2 tensors or batched rank-3 tensors (equal batch dims).
// With transpose_b, b is [n,k] (or [B,n,k]) and the product is a * b^T.

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b = false) {
  Graph<T>& g = *a.graph;
  const TensorData<T>& av = a.value();
  const TensorData<T>& bv = b.value();
  if (av.rank() != bv.rank() || (av.rank() != 2 && av.rank() != 3))
    throw ShapeMismatch("matmul ranks " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  int64_t batch = av.rank() == 3 ? av.dim(0) : 1;
  if (av.rank() == 3 && bv.dim(0) != batch)
    throw ShapeMismatch("matmul batch dims " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  int off = av.rank() == 3 ? 1 : 0;
  int64_t m = av.dim(off), k = av.dim(off + 1);
  int64_t kb = transpose_b ? bv.dim(off + 1) : bv.dim(off);
  int64_t n = transpose_b ? bv.dim(off) : bv.dim(off + 1);
  if (k != kb) throw ShapeMismatch("matmul inner dims " + shape_str(av.shape) + " x " + shape_str(bv.shape));

  Shape out_shape = av.rank() == 3 ? Shape{static_cast<int>(batch), static_cast<int>(m), static_cast<int>(n)}
                                   : Shape{static_cast<int>(m), static_cast<int>(n)};
  TensorData<T> out(std::move(out_shape));
  for (int64_t bi = 0; bi < batch; ++bi) {
    const T* ap = av.ptr() + bi * m * k;
    const T* bp = bv.ptr() + bi * k * n;
    T* cp = out.ptr() + bi * m * n;
    if (transpose_b)
      kernels::gemm_nt(m, k, n, ap, bp, cp, false);
    else
      kernels::gemm_nn(m, k, n, ap, bp, cp, false);
  }

  bool rg = g.requires_grad(a.id) || g.requires_grad(b.id);
  int aid = a.id, bid = b.id, oid = g.size();
  return g.make(std::move(out), rg, [=](Graph<T>& gr) {
    const TensorData<T>& go = gr.grad_of(oid);
    if (gr.requires_grad(aid)) {
      TensorData<T>& ga = gr.grad_buffer(aid);
      const TensorData<T>& bv2 = gr.value(bid);
      for (int64_t bi = 0; bi < batch; ++bi) {
        const T* gop = go.ptr() + bi * m * n;
        const T* bp = bv2.ptr() + bi * k * n;
        T* gap = ga.ptr() + bi * m * k;
        if (transpose_b)
          kernels::gemm_nn(m, n, k, gop, bp, gap, true);  // dA = dC * B
        else
          kernels::gemm_nt(m, n, k, gop, bp, gap, true);  // dA = dC * B^T
      }
    }
    if (gr.requires_grad(bid)) {
      TensorData<T>& gb = gr.grad_buffer(bid);
      const TensorData<T>& av2 = gr.value(aid);
      for (int64_t bi = 0; bi < batch; ++bi) {
        const T* gop = go.ptr() + bi * m * n;
        const T* ap = av2.ptr() + bi * m * k;
        T* gbp = gb.ptr() + bi * k * n;
        if (transpose_b)
          kernels::gemm_tn(m, n, k, gop, ap, gbp, true);  // dB = dC^T * A
        else
          kernels::gemm_tn(m, k, n, ap, gop, gbp, true);  // dB = A^T * dC
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise and broadcast ops

// add: identical shapes, or b's shape a strict suffix of a's (bias-style).
template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.graph;
  const TensorData<T>& av = a.value();
  const TensorData<T>& bv = b.value();
  bool same = av.shape == bv.shape;
  if (!same) {
    if (bv.rank() >= av.rank() ||
        !std::equal(bv.shape.begin(), bv.shape.end(), av.shape.end() - bv.rank()))
      throw ShapeMismatch("add shapes " + shape_str(av.shape) + " + " + shape_str(bv.shape));
  }
  int64_t bn = bv.numel();
  TensorData<T> out = av;
  {
    T* __restrict o = out.ptr();
    const T* __restrict bp = bv.ptr();
    int64_t repeats = out.numel() / bn;
    for (int64_t r = 0; r < repeats; ++r) {
      T* block = o + r * bn;
      for (int64_t i = 0; i < bn; ++i) block[i] += bp[i];
    }
  }
  bool rg = g.requires_grad(a.id) || g.requires_grad(b.id);
  int aid = a.id, bid = b.id, oid = g.size();
  return g.make(std::move(out), rg, [=](Graph<T>& gr) {
    const TensorData<T>& go = gr.grad_of(oid);
    if (gr.requires_grad(aid)) detail::axpy(gr.grad_buffer(aid).ptr(), go.ptr(), go.numel());
    if (gr.requires_grad(bid)) {
      TensorData<T>& gb = gr.grad_buffer(bid);
      const T* gop = go.ptr();
      T* gbp = gb.ptr();
      int64_t repeats = go.numel() / bn;
      for (int64_t r = 0; r < repeats; ++r) {
        const T* block = gop + r * bn;
        for (int64_t i = 0; i < bn; ++i) gbp[i] += block[i];
      }
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.graph;
  const TensorData<T>& av = a.value();
  const TensorData<T>& bv = b.value();
  if (av.shape != bv.shape)
    throw ShapeMismatch("mul shapes " + shape_str(av.shape) + " * " + shape_str(bv.shape));
  TensorData<T> out = av;
  {
    T* o = out.ptr();
    const T* bp = bv.ptr();
    for (int64_t i = 0; i < out.numel(); ++i) o[i] *= bp[i];
  }
  bool rg = g.requires_grad(a.id) || g.requires_grad(b.id);
  int aid = a.id, bid = b.id, oid = g.size();
  return g.make(std::move(out), rg, [=](Graph<T>& gr) {
    const TensorData<T>& go = gr.grad_of(oid);
    if (gr.requires_grad(aid)) {
      T* ga = gr.grad_buffer(aid).ptr();
      const T* bp = gr.value(bid).ptr();
      const T* gop = go.ptr();
      for (int64_t i = 0; i < go.numel(); ++i) ga[i] += gop[i] * bp[i];
    }
    if (gr.requires_grad(bid)) {
      T* gb = gr.grad_buffer(bid).ptr();
      const T* ap = gr.value(aid).ptr();
      const T* gop = go.ptr();
      for (int64_t i = 0; i < go.numel(); ++i) gb[i] += gop[i] * ap[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, double s) {
  Graph<T>& g = *a.graph;
  TensorData<T> out = a.value();
  for (T& v : out.data) v *= static_cast<T>(s);
  bool rg = g.requires_grad(a.id);
  int aid = a.id, oid = g.size();
  return g.make(std::move(out), rg, [=](Graph<T>& gr) {
    detail::axpy(gr.grad_buffer(aid).ptr(), gr.grad_of(oid).ptr(), gr.grad_of(oid).numel(),
                 static_cast<T>(s));
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Graph<T>& g = *a.graph;
  TensorData<T> out = a.value();
  for (T& v : out.data)
    if (v < T{}) v = T{};
  bool rg = g.requires_grad(a.id);
  int aid = a.id, oid = g.size();
  return g.make(std::move(out), rg, [=](Graph<T>& gr) {
    const TensorData<T>& go = gr.grad_of(oid);
    const T* x = gr.value(aid).ptr();
    T* ga = gr.grad_buffer(aid).ptr();
    const T* gop = go.ptr();
    for (int64_t i = 0; i < go.numel(); ++i)
      if (x[i] > T{}) ga[i] += gop[i];
  });
}

// Train-time Bernoulli mask scaled by 1/(1-p). The mask is a pure function of
// (key, element index), so backward and repeated forwards replay it exactly.
template <typename T>
Var<T> dropout(Var<T> a, double p, uint64_t key) {
  if (p <= 0.0) return a;
  Graph<T>& g = *a.graph;
  TensorData<T> out = a.value();
  T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  {
    T* o = out.ptr();
    for (int64_t i = 0; i < out.numel(); ++i)
      o[i] = counter_uniform(key, static_cast<uint64_t>(i)) >= p ? o[i] * keep_scale : T{};
  }
  bool rg = g.requires_grad(a.id);
  int aid = a.id, oid = g.size();
  return g.make(std::move(out), rg, [=](Graph<T>& gr) {
    const TensorData<T>& go = gr.grad_of(oid);
    T* ga = gr.grad_buffer(aid).ptr();
    const T* gop = go.ptr();
    for (int64_t i = 0; i < go.numel(); ++i)
      if (counter_uniform(key, static_cast<uint64_t>(i)) >= p) ga[i] += gop[i] * keep_scale;
  });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Graph<T>& g = *a.graph;
  if (shape_numel(shape) != a.value().numel())
    throw ShapeMismatch("reshape " + shape_str(a.value().shape) + " -> " + shape_str(shape));
  TensorData<T> out(std::move(shape), a.value().data);
  bool rg = g.requires_grad(a.id);
  int aid = a.id, oid = g.size();
  return g.make(std::move(out), rg, [=](Graph<T>& gr) {
    detail::axpy(gr.grad_buffer(aid).ptr(), gr.grad_of(oid).ptr(), gr.grad_of(oid).numel());
  });
}

namespace detail {

inline std::vector<int64_t> row_strides(const Shape& shape) {
  std::vector<int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    s[static_cast<size_t>(i)] = s[static_cast<size_t>(i) + 1] * shape[static_cast<size_t>(i) + 1];
  return s;
}

// dst[idx] = src[perm(idx)] for the axis permutation `axes` (dst axis i comes
// from src axis axes[i]). Rank <= 4, dispatched to nested loops.
template <typename T>
void permute_copy(const TensorData<T>& src, const std::vector<int>& axes, TensorData<T>& dst) {
  std::vector<int64_t> sstr = row_strides(src.shape);
  int rank = src.rank();
  if (rank > 4) throw ShapeMismatch("permute supports rank <= 4, got " + shape_str(src.shape));
  // normalize to 4 axes by prepending unit dims
  int64_t dim[4] = {1, 1, 1, 1};
  int64_t str[4] = {0, 0, 0, 0};
  int off = 4 - rank;
  for (int ax = 0; ax < rank; ++ax) {
    dim[off + ax] = dst.shape[static_cast<size_t>(ax)];
    str[off + ax] = sstr[static_cast<size_t>(axes[static_cast<size_t>(ax)])];
  }
  const T* sp = src.ptr();
  T* dp = dst.ptr();
  int64_t out = 0;
  for (int64_t i0 = 0; i0 < dim[0]; ++i0)
    for (int64_t i1 = 0; i1 < dim[1]; ++i1)
      for (int64_t i2 = 0; i2 < dim[2]; ++i2) {
        const T* row = sp + i0 * str[0] + i1 * str[1] + i2 * str[2];
        int64_t s3 = str[3];
        for (int64_t i3 = 0; i3 < dim[3]; ++i3) dp[out++] = row[i3 * s3];
      }
}

}  // namespace detail

template <typename T>
Var<T> permute(Var<T> a, std::vector<int> axes) {
  Graph<T>& g = *a.graph;
  const TensorData<T>& av = a.value();
  if (static_cast<int>(axes.size()) != av.rank())
    throw ShapeMismatch("permute axes size " + std::to_string(axes.size()) + " for rank " +
                        std::to_string(av.rank()));
  Shape out_shape(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) out_shape[i] = av.dim(axes[i]);
  TensorData<T> out(std::move(out_shape));
  detail::permute_copy(av, axes, out);

  std::vector<int> inv(axes.size());
  for (size_t i = 0; i < axes.size(); ++i) inv[static_cast<size_t>(axes[i])] = static_cast<int>(i);
  bool rg = g.requires_grad(a.id);
  int aid = a.id, oid = g.size();
  return g.make(std::move(out), rg, [=](Graph<T>& gr) {
    TensorData<T> gsrc(gr.value(aid).shape);
    detail::permute_copy(gr.grad_of(oid), inv, gsrc);
    detail::axpy(gr.grad_buffer(aid).ptr(), gsrc.ptr(), gsrc.numel());
  });
}

// ---------------------------------------------------------------------------
// Normalization and softmax

// Softmax over the last axis. `valid`, when provided, flags entries that may
// receive probability mass; rows with no valid entry yield all zeros.
template <typename T>
Var<T> softmax_lastdim(Var<T> a, std::shared_ptr<const std::vector<uint8_t>> valid = nullptr) {
  Graph<T>& g = *a.graph;
  const TensorData<T>& av = a.value();
  int64_t cols = av.dim(av.rank() - 1);
  int64_t rows = av.numel() / cols;
  if (valid && static_cast<int64_t>(valid->size()) != av.numel())
    throw ShapeMismatch("softmax mask numel " + std::to_string(valid->size()) + " for " +
                        shape_str(av.shape));
  TensorData<T> out(av.shape);
  kernels::softmax_rows(rows, cols, av.ptr(), valid ? valid->data() : nullptr, out.ptr());
  bool rg = g.requires_grad(a.id);
  int aid = a.id, oid = g.size();
  return g.make(std::move(out), rg, [=](Graph<T>& gr) {
    const TensorData<T>& y = gr.value(oid);
    const TensorData<T>& go = gr.grad_of(oid);
    T* ga = gr.grad_buffer(aid).ptr();
    const T* yp = y.ptr();
    const T* gop = go.ptr();
    for (int64_t r = 0; r < rows; ++r) {
      const T* yr = yp + r * cols;
      const T* gr2 = gop + r * cols;
      T dot{};
      for (int64_t j = 0; j < cols; ++j) dot += yr[j] * gr2[j];
      T* gar = ga + r * cols;
      for (int64_t j = 0; j < cols; ++j) gar[j] += yr[j] * (gr2[j] - dot);
    }
  });
}

template <typename T>
Var<T> log_softmax_lastdim(Var<T> a) {
  Graph<T>& g = *a.graph;
  const TensorData<T>& av = a.value();
  int64_t cols = av.dim(av.rank() - 1);
  int64_t rows = av.numel() / cols;
  TensorData<T> out(av.shape);
  kernels::log_softmax_rows(rows, cols, av.ptr(), out.ptr());
  bool rg = g.requires_grad(a.id);
  int aid = a.id, oid = g.size();
  return g.make(std::move(out), rg, [=](Graph<T>& gr) {
    const TensorData<T>& y = gr.value(oid);
    const TensorData<T>& go = gr.grad_of(oid);
    T* ga = gr.grad_buffer(aid).ptr();
    const T* yp = y.ptr();
    const T* gop = go.ptr();
    for (int64_t r = 0; r < rows; ++r) {
      const T* yr = yp + r * cols;
      const T* gr2 = gop + r * cols;
      T sum{};
      for (int64_t j = 0; j < cols; ++j) sum += gr2[j];
      T* gar = ga + r * cols;
      for (int64_t j = 0; j < cols; ++j) gar[j] += gr2[j] - std::exp(yr[j]) * sum;
    }
  });
}

// Layer normalization over the last axis with affine gain/bias.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps = 1e-5) {
  Graph<T>& g = *x.graph;
  const TensorData<T>& xv = x.value();
  int64_t cols = xv.dim(xv.rank() - 1);
  int64_t rows = xv.numel() / cols;
  if (gain.value().numel() != cols || bias.value().numel() != cols)
    throw ShapeMismatch("layer_norm gain/bias for " + shape_str(xv.shape));
  TensorData<T> out(xv.shape);
  auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  kernels::layer_norm_rows(rows, cols, xv.ptr(), gain.value().ptr(), bias.value().ptr(),
                           static_cast<T>(eps), out.ptr(), mean->data(), rstd->data());
  bool rg = g.requires_grad(x.id) || g.requires_grad(gain.id) || g.requires_grad(bias.id);
  int xid = x.id, gid = gain.id, bid = bias.id, oid = g.size();
  return g.make(std::move(out), rg, [=](Graph<T>& gr) {
    const TensorData<T>& go = gr.grad_of(oid);
    const T* xp = gr.value(xid).ptr();
    const T* gp = gr.value(gid).ptr();
    const T* gop = go.ptr();
    const T* mp = mean->data();
    const T* rp = rstd->data();
    bool need_x = gr.requires_grad(xid);
    bool need_g = gr.requires_grad(gid);
    bool need_b = gr.requires_grad(bid);
    T* gx = need_x ? gr.grad_buffer(xid).ptr() : nullptr;
    T* gg = need_g ? gr.grad_buffer(gid).ptr() : nullptr;
    T* gb = need_b ? gr.grad_buffer(bid).ptr() : nullptr;
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = xp + r * cols;
      const T* gor = gop + r * cols;
      T m = mp[r], rs = rp[r];
      if (need_g || need_b) {
        for (int64_t j = 0; j < cols; ++j) {
          T xhat = (xr[j] - m) * rs;
          if (gg) gg[j] += gor[j] * xhat;
          if (gb) gb[j] += gor[j];
        }
      }
      if (need_x) {
        T sum_dyg{};
        T sum_dyg_xhat{};
        for (int64_t j = 0; j < cols; ++j) {
          T dyg = gor[j] * gp[j];
          T xhat = (xr[j] - m) * rs;
          sum_dyg += dyg;
          sum_dyg_xhat += dyg * xhat;
        }
        T inv_cols = T(1) / static_cast<T>(cols);
        T* gxr = gx + r * cols;
        for (int64_t j = 0; j < cols; ++j) {
          T dyg = gor[j] * gp[j];
          T xhat = (xr[j] - m) * rs;
          gxr[j] += rs * (dyg - inv_cols * sum_dyg - xhat * inv_cols * sum_dyg_xhat);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Gather / reductions / losses

// out[p,:] = table[ids[p],:] with `lead_shape` prepended, e.g. [B,U] -> [B,U,d].
template <typename T>
Var<T> embedding(Var<T> table, std::shared_ptr<const std::vector<int>> ids, Shape lead_shape) {
  Graph<T>& g = *table.graph;
  const TensorData<T>& tv = table.value();
  if (tv.rank() != 2) throw ShapeMismatch("embedding table must be rank 2, got " + shape_str(tv.shape));
  int64_t vocab = tv.dim(0), dim = tv.dim(1);
  int64_t n = static_cast<int64_t>(ids->size());
  if (shape_numel(lead_shape) != n)
    throw ShapeMismatch("embedding lead shape " + shape_str(lead_shape) + " for " + std::to_string(n) +
                        " ids");
  Shape out_shape = lead_shape;
  out_shape.push_back(static_cast<int>(dim));
  TensorData<T> out(std::move(out_shape));
  for (int64_t p = 0; p < n; ++p) {
    int id = (*ids)[static_cast<size_t>(p)];
    if (id < 0 || id >= vocab)
      throw BadTarget("embedding id " + std::to_string(id) + " outside vocab " + std::to_string(vocab));
    std::copy_n(tv.ptr() + id * dim, dim, out.ptr() + p * dim);
  }
  bool rg = g.requires_grad(table.id);
  int tid = table.id, oid = g.size();
  return g.make(std::move(out), rg, [=](Graph<T>& gr) {
    const TensorData<T>& go = gr.grad_of(oid);
    T* gt = gr.grad_buffer(tid).ptr();
    const T* gop = go.ptr();
    for (int64_t p = 0; p < n; ++p)
      detail::axpy(gt + (*ids)[static_cast<size_t>(p)] * dim, gop + p * dim, dim);
  });
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  Graph<T>& g = *a.graph;
  T total{};
  for (T v : a.value().data) total += v;
  bool rg = g.requires_grad(a.id);
  int aid = a.id, oid = g.size();
  return g.make(TensorData<T>(Shape{1}, std::vector<T>{total}), rg, [=](Graph<T>& gr) {
    T go = gr.grad_of(oid).data[0];
    T* ga = gr.grad_buffer(aid).ptr();
    for (int64_t i = 0; i < gr.value(aid).numel(); ++i) ga[i] += go;
  });
}

// Sum over non-pad positions of the label-smoothed negative log-likelihood:
// target distribution puts 1-eps on the gold class and eps/(V-1) on each
// other class. Divide by the non-pad count for the mean.
template <typename T>
Var<T> label_smoothed_ce_sum(Var<T> logits, std::shared_ptr<const std::vector<int>> targets, double eps,
                             int pad_id) {
  Graph<T>& g = *logits.graph;
  const TensorData<T>& lv = logits.value();
  int64_t vocab = lv.dim(lv.rank() - 1);
  int64_t rows = lv.numel() / vocab;
  if (static_cast<int64_t>(targets->size()) != rows)
    throw ShapeMismatch("ce targets " + std::to_string(targets->size()) + " rows for logits " +
                        shape_str(lv.shape));
  for (int t : *targets)
    if (t < 0 || t >= vocab)
      throw BadTarget("target id " + std::to_string(t) + " outside vocab " + std::to_string(vocab));

  TensorData<T> logp(lv.shape);
  kernels::log_softmax_rows(rows, vocab, lv.ptr(), logp.ptr());
  T off_w = vocab > 1 ? static_cast<T>(eps / static_cast<double>(vocab - 1)) : T{};
  T gold_w = static_cast<T>(1.0 - eps);
  T loss{};
  for (int64_t r = 0; r < rows; ++r) {
    int t = (*targets)[static_cast<size_t>(r)];
    if (t == pad_id) continue;
    const T* lr = logp.ptr() + r * vocab;
    T sum_logp{};
    for (int64_t j = 0; j < vocab; ++j) sum_logp += lr[j];
    // (1-eps)*logp[gold] + eps/(V-1) * (sum - logp[gold])
    loss -= gold_w * lr[t] + off_w * (sum_logp - lr[t]);
  }

  auto logp_saved = std::make_shared<TensorData<T>>(std::move(logp));
  bool rg = g.requires_grad(logits.id);
  int lid = logits.id, oid = g.size();
  return g.make(TensorData<T>(Shape{1}, std::vector<T>{loss}), rg, [=](Graph<T>& gr) {
    T go = gr.grad_of(oid).data[0];
    T* gl = gr.grad_buffer(lid).ptr();
    const T* lp = logp_saved->ptr();
    for (int64_t r = 0; r < rows; ++r) {
      int t = (*targets)[static_cast<size_t>(r)];
      if (t == pad_id) continue;
      const T* lr = lp + r * vocab;
      T* glr = gl + r * vocab;
      for (int64_t j = 0; j < vocab; ++j) {
        T target_p = (j == t) ? gold_w : off_w;
        glr[j] += go * (std::exp(lr[j]) - target_p);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checker.

// Max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// using central differences with step h. `f` must build a scalar from x.
inline double grad_check(const std::function<Var<double>(Graph<double>&, Var<double>)>& f,
                         const TensorData<double>& x, double h = 1e-5) {
  TensorData<double> analytic(x.shape);
  {
    Graph<double> g;
    Var<double> xv = g.leaf(x, true);
    Var<double> loss = f(g, xv);
    if (loss.value().numel() != 1) throw NotScalar("grad_check requires a scalar-valued function");
    g.backward(loss);
    if (g.grad_ready(xv.id)) analytic = g.grad_of(xv.id);
  }
  auto eval = [&](const TensorData<double>& xt) {
    Graph<double> g;
    Var<double> xv = g.leaf(xt, false);
    return f(g, xv).value().data[0];
  };
  double max_rel = 0.0;
  TensorData<double> xt = x;
  for (int64_t i = 0; i < x.numel(); ++i) {
    double orig = xt.data[static_cast<size_t>(i)];
    xt.data[static_cast<size_t>(i)] = orig + h;
    double fp = eval(xt);
    xt.data[static_cast<size_t>(i)] = orig - h;
    double fm = eval(xt);
    xt.data[static_cast<size_t>(i)] = orig;
    double numeric = (fp - fm) / (2.0 * h);
    double a = analytic.data[static_cast<size_t>(i)];
    double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace slt
