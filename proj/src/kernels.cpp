// SPDX-License-Identifier: Apache-2.0

#include "moelab/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace moelab::kern {

namespace ref {

void mm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  // i-k-j order: each c[i][j] accumulates over ascending k, rows stay hot.
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    std::fill(ci, ci + n, 0.0);
    const double* ai = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void mm_nt_acc(const double* g, const double* b, double* acc, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ai = acc + i * k;
    for (int64_t j = 0; j < k; ++j) {
      const double* bj = b + j * n;
      double s = 0.0;
      for (int64_t l = 0; l < n; ++l) s += gi[l] * bj[l];
      ai[j] += s;
    }
  }
}

void mm_tn_acc(const double* a, const double* g, double* acc, int64_t m, int64_t k, int64_t n) {
  for (int64_t j = 0; j < k; ++j) {
    double* accj = acc + j * n;
    for (int64_t i = 0; i < m; ++i) {
      const double aij = a[i * k + j];
      const double* gi = g + i * n;
      for (int64_t l = 0; l < n; ++l) accj[l] += aij * gi[l];
    }
  }
}

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    double* yr = y + r * cols;
    double mx = xr[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double z = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      z += yr[c];
    }
    const double inv = 1.0 / z;
    for (int64_t c = 0; c < cols; ++c) yr[c] *= inv;
  }
}

}  // namespace ref

// The parallel versions repeat the reference loop bodies with the outer loop
// split across threads.  Each output element is produced by one thread with
// the same serial inner loop, hence bit-identical results.

void mm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  const bool par = m * k * n >= kMatmulParallelWork && m > 1;
#pragma omp parallel for schedule(static) if (par)
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    std::fill(ci, ci + n, 0.0);
    const double* ai = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void mm_nt_acc(const double* g, const double* b, double* acc, int64_t m, int64_t k, int64_t n) {
  const bool par = m * k * n >= kMatmulParallelWork && m > 1;
#pragma omp parallel for schedule(static) if (par)
  for (int64_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ai = acc + i * k;
    for (int64_t j = 0; j < k; ++j) {
      const double* bj = b + j * n;
      double s = 0.0;
      for (int64_t l = 0; l < n; ++l) s += gi[l] * bj[l];
      ai[j] += s;
    }
  }
}

void mm_tn_acc(const double* a, const double* g, double* acc, int64_t m, int64_t k, int64_t n) {
  const bool par = m * k * n >= kMatmulParallelWork && k > 1;
#pragma omp parallel for schedule(static) if (par)
  for (int64_t j = 0; j < k; ++j) {
    double* accj = acc + j * n;
    for (int64_t i = 0; i < m; ++i) {
      const double aij = a[i * k + j];
      const double* gi = g + i * n;
      for (int64_t l = 0; l < n; ++l) accj[l] += aij * gi[l];
    }
  }
}

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
  const bool par = rows * cols >= kRowParallelWork && rows > 1;
#pragma omp parallel for schedule(static) if (par)
  for (int64_t r = 0; r < rows; ++r) {
    ref::softmax_rows(x + r * cols, y + r * cols, 1, cols);
  }
}

void map_unary(const double* x, double* y, int64_t n, double (*f)(double)) {
  const bool par = n >= kMapParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (int64_t i = 0; i < n; ++i) y[i] = f(x[i]);
}

}  // namespace moelab::kern
