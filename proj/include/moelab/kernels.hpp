// SPDX-License-Identifier: Apache-2.0
//
// Raw array kernels.  Each has a serial reference under kern::ref and an
// OpenMP-parallel default version.  The parallel versions split work over
// independent output elements and keep each element's accumulation order
// identical to the reference, so the two match bit for bit and training is
// reproducible regardless of thread count.  tools/moelab_bench compares them.
#pragma once

#include <cstdint>

namespace moelab::kern {

namespace ref {

// c = a * b               a: [m x k], b: [k x n], c: [m x n]
void mm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);

// acc += g * b^T          g: [m x n], b: [k x n], acc: [m x k]
void mm_nt_acc(const double* g, const double* b, double* acc, int64_t m, int64_t k, int64_t n);

// acc += a^T * g          a: [m x k], g: [m x n], acc: [k x n]
void mm_tn_acc(const double* a, const double* g, double* acc, int64_t m, int64_t k, int64_t n);

// Row-wise softmax with max subtraction.  x, y: [rows x cols].
void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols);

}  // namespace ref

void mm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void mm_nt_acc(const double* g, const double* b, double* acc, int64_t m, int64_t k, int64_t n);
void mm_tn_acc(const double* a, const double* g, double* acc, int64_t m, int64_t k, int64_t n);
void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols);

// y[i] = f(x[i]), parallel over elements.
void map_unary(const double* x, double* y, int64_t n, double (*f)(double));

// Work below these sizes runs serially; OpenMP overhead would dominate.
inline constexpr int64_t kMatmulParallelWork = 1 << 15;   // m*k*n
inline constexpr int64_t kRowParallelWork = 1 << 14;      // rows*cols
inline constexpr int64_t kMapParallelWork = 1 << 15;      // n

}  // namespace moelab::kern
