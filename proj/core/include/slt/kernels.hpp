#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace slt::kernels {

// Row-partitioned parallelism: each output row is written by exactly one
// thread with a fixed serial inner order, so results are bit-identical for
// any thread count.
template <typename F>
void parallel_rows(int64_t rows, int64_t work_per_row, F&& body) {
  if (rows * work_per_row >= 16384) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) body(r);
  } else {
    for (int64_t r = 0; r < rows; ++r) body(r);
  }
}

// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_nn(int64_t m, int64_t k, int64_t n, const T* A, const T* B, T* C, bool accumulate) {
  parallel_rows(m, k * n, [&](int64_t i) {
    T* __restrict c = C + i * n;
    if (!accumulate) std::fill(c, c + n, T{});
    const T* a = A + i * k;
    for (int64_t l = 0; l < k; ++l) {
      T av = a[l];
      const T* __restrict b = B + l * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  });
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
// B is transposed into scratch first so the inner loops stay stride-1 axpy
// updates, which vectorize without reassociation.
template <typename T>
void gemm_nt(int64_t m, int64_t k, int64_t n, const T* A, const T* B, T* C, bool accumulate) {
  std::vector<T> bt(static_cast<size_t>(k) * n);
  for (int64_t j = 0; j < n; ++j)
    for (int64_t l = 0; l < k; ++l) bt[static_cast<size_t>(l * n + j)] = B[j * k + l];
  gemm_nn(m, k, n, A, bt.data(), C, accumulate);
}

// C[k,n] (+)= A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(int64_t m, int64_t k, int64_t n, const T* A, const T* B, T* C, bool accumulate) {
  parallel_rows(k, m * n, [&](int64_t p) {
    T* __restrict c = C + p * n;
    if (!accumulate) std::fill(c, c + n, T{});
    for (int64_t i = 0; i < m; ++i) {
      T av = A[i * k + p];
      const T* __restrict b = B + i * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  });
}

// Max-subtracted softmax over rows; masked-out entries get 0, and a row with
// no valid entry becomes all zeros.
template <typename T>
void softmax_rows(int64_t rows, int64_t cols, const T* x, const uint8_t* valid, T* y) {
  parallel_rows(rows, cols, [&](int64_t r) {
    const T* xr = x + r * cols;
    const uint8_t* vr = valid ? valid + r * cols : nullptr;
    T* yr = y + r * cols;
    T max_v = -std::numeric_limits<T>::infinity();
    for (int64_t j = 0; j < cols; ++j)
      if (!vr || vr[j]) max_v = std::max(max_v, xr[j]);
    if (max_v == -std::numeric_limits<T>::infinity()) {
      std::fill(yr, yr + cols, T{});
      return;
    }
    T sum{};
    for (int64_t j = 0; j < cols; ++j) {
      T e = (!vr || vr[j]) ? std::exp(xr[j] - max_v) : T{};
      yr[j] = e;
      sum += e;
    }
    T inv = T(1) / sum;
    for (int64_t j = 0; j < cols; ++j) yr[j] *= inv;
  });
}

template <typename T>
void log_softmax_rows(int64_t rows, int64_t cols, const T* x, T* y) {
  parallel_rows(rows, cols, [&](int64_t r) {
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    T max_v = xr[0];
    for (int64_t j = 1; j < cols; ++j) max_v = std::max(max_v, xr[j]);
    T sum{};
    for (int64_t j = 0; j < cols; ++j) sum += std::exp(xr[j] - max_v);
    T lse = max_v + std::log(sum);
    for (int64_t j = 0; j < cols; ++j) yr[j] = xr[j] - lse;
  });
}

// y = (x - mean) * rstd * gain + bias per row; saves mean/rstd for backward.
template <typename T>
void layer_norm_rows(int64_t rows, int64_t cols, const T* x, const T* gain, const T* bias, T eps, T* y,
                     T* mean_out, T* rstd_out) {
  parallel_rows(rows, cols, [&](int64_t r) {
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    T mean{};
    for (int64_t j = 0; j < cols; ++j) mean += xr[j];
    mean /= static_cast<T>(cols);
    T var{};
    for (int64_t j = 0; j < cols; ++j) {
      T d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(cols);
    T rstd = T(1) / std::sqrt(var + eps);
    for (int64_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mean) * rstd * gain[j] + bias[j];
    if (mean_out) mean_out[r] = mean;
    if (rstd_out) rstd_out[r] = rstd;
  });
}

}  // namespace slt::kernels
