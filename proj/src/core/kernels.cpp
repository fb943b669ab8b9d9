#include "eaxl/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>

namespace eaxl::kernels {

namespace {
std::atomic<bool> g_parallel{true};

inline void softmax_row(const Scalar* x, Scalar* out, std::size_t cols) {
  Scalar max_v = x[0];
  for (std::size_t j = 1; j < cols; ++j) max_v = std::max(max_v, x[j]);
  Scalar total = 0;
  for (std::size_t j = 0; j < cols; ++j) {
    out[j] = std::exp(x[j] - max_v);
    total += out[j];
  }
  for (std::size_t j = 0; j < cols; ++j) out[j] /= total;
}

// Row kernels shared by both paths; only the outer loop differs.
inline void matmul_row(const Scalar* a, const Scalar* b, Scalar* out, std::size_t i,
                       std::size_t k, std::size_t n) {
  Scalar* o = out + i * n;
  std::fill(o, o + n, Scalar(0));
  const Scalar* ar = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const Scalar av = ar[p];
    const Scalar* br = b + p * n;
    for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
  }
}

inline void matmul_nt_row(const Scalar* a, const Scalar* b, Scalar* out, std::size_t i,
                          std::size_t k, std::size_t n) {
  const Scalar* ar = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const Scalar* br = b + j * k;
    Scalar acc = 0;
    for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
    out[i * n + j] = acc;
  }
}

// Output row p of a^T b, accumulated over the m rows of a and b.
inline void matmul_tn_row(const Scalar* a, const Scalar* b, Scalar* out, std::size_t p,
                          std::size_t m, std::size_t k, std::size_t n) {
  Scalar* o = out + p * n;
  std::fill(o, o + n, Scalar(0));
  for (std::size_t i = 0; i < m; ++i) {
    const Scalar av = a[i * k + p];
    const Scalar* br = b + i * n;
    for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
  }
}
}  // namespace

namespace serial {
void matmul(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
            std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a, b, out, i, k, n);
}

void matmul_nt(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
               std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(a, b, out, i, k, n);
}

void matmul_tn(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
               std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) matmul_tn_row(a, b, out, p, m, k, n);
}

void softmax_rows(const Scalar* x, Scalar* out, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) softmax_row(x + i * cols, out + i * cols, cols);
}
}  // namespace serial

namespace parallel {
void matmul(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
            std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) matmul_row(a, b, out, i, k, n);
}

void matmul_nt(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
               std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) matmul_nt_row(a, b, out, i, k, n);
}

void matmul_tn(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
               std::size_t n) {
  const auto rows = static_cast<std::int64_t>(k);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < rows; ++p) matmul_tn_row(a, b, out, p, m, k, n);
}

void softmax_rows(const Scalar* x, Scalar* out, std::size_t rows, std::size_t cols) {
  const auto r = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < r; ++i) softmax_row(x + i * cols, out + i * cols, cols);
}
}  // namespace parallel

void set_parallel_enabled(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return g_parallel.load(); }

namespace {
bool use_parallel(std::size_t work) {
  return work >= kParallelThreshold && g_parallel.load(std::memory_order_relaxed);
}
}  // namespace

void matmul(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
            std::size_t n) {
  if (use_parallel(m * k * n)) {
    parallel::matmul(a, b, out, m, k, n);
  } else {
    serial::matmul(a, b, out, m, k, n);
  }
}

void matmul_nt(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
               std::size_t n) {
  if (use_parallel(m * k * n)) {
    parallel::matmul_nt(a, b, out, m, k, n);
  } else {
    serial::matmul_nt(a, b, out, m, k, n);
  }
}

void matmul_tn(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
               std::size_t n) {
  if (use_parallel(m * k * n)) {
    parallel::matmul_tn(a, b, out, m, k, n);
  } else {
    serial::matmul_tn(a, b, out, m, k, n);
  }
}

void softmax_rows(const Scalar* x, Scalar* out, std::size_t rows, std::size_t cols) {
  if (use_parallel(rows * cols * 16)) {
    parallel::softmax_rows(x, out, rows, cols);
  } else {
    serial::softmax_rows(x, out, rows, cols);
  }
}

}  // namespace eaxl::kernels
