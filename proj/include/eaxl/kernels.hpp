#pragma once

#include <cstddef>

#include "eaxl/tensor.hpp"

// Dense inner loops used by the autodiff ops. Every kernel exists twice: a
// serial reference and an OpenMP version that splits output rows across
// threads. Each output element is accumulated by exactly one thread in the
// same order as the serial loop, so the two agree bitwise.
namespace eaxl::kernels {

// out[m,n] = a[m,k] * b[k,n]
// out[m,n] = a[m,k] * b[n,k]^T            (nt)
// out[k,n] = a[m,k]^T * b[m,n]            (tn)
// All variants overwrite `out`.
namespace serial {
void matmul(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
            std::size_t n);
void matmul_nt(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
               std::size_t n);
void matmul_tn(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
               std::size_t n);
/// Max-shifted softmax over each contiguous row of length `cols`.
void softmax_rows(const Scalar* x, Scalar* out, std::size_t rows, std::size_t cols);
}  // namespace serial

namespace parallel {
void matmul(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
            std::size_t n);
void matmul_nt(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
               std::size_t n);
void matmul_tn(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
               std::size_t n);
void softmax_rows(const Scalar* x, Scalar* out, std::size_t rows, std::size_t cols);
}  // namespace parallel

/// Work (m*k*n multiply-adds) below which the dispatchers stay serial.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

// Dispatchers used by the ops layer. They pick the OpenMP path for large
// problems unless parallelism has been switched off.
void set_parallel_enabled(bool enabled);
bool parallel_enabled();

void matmul(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
            std::size_t n);
void matmul_nt(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
               std::size_t n);
void matmul_tn(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
               std::size_t n);
void softmax_rows(const Scalar* x, Scalar* out, std::size_t rows, std::size_t cols);

}  // namespace eaxl::kernels
