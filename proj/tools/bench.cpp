// SPDX-License-Identifier: Apache-2.0
//
// Kernel benchmark: serial reference vs the OpenMP versions the library
// actually runs.  Also asserts the two produce bit-identical output, which is
// the contract that makes training reproducible across thread counts.
#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "moelab/kernels.hpp"
#include "moelab/rng.hpp"

using namespace moelab;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<double> random_vec(int64_t n, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = rng.normal(0.0, 1.0);
  return v;
}

template <class F>
double time_best_of(int reps, F&& f) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = Clock::now();
    f();
    best = std::min(best, ms_since(t0));
  }
  return best;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

int g_failures = 0;

void report(const char* name, double serial_ms, double parallel_ms, bool identical) {
  std::printf("%-24s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx   %s\n", name,
              serial_ms, parallel_ms, serial_ms / parallel_ms,
              identical ? "bit-identical" : "MISMATCH");
  if (!identical) ++g_failures;
}

void bench_matmul(int64_t m, int64_t k, int64_t n, int reps, Rng& rng) {
  const auto a = random_vec(m * k, rng);
  const auto b = random_vec(k * n, rng);
  std::vector<double> c_ref(static_cast<size_t>(m * n)), c_omp(c_ref.size());

  const double t_ref = time_best_of(reps, [&] { kern::ref::mm_nn(a.data(), b.data(), c_ref.data(), m, k, n); });
  const double t_omp = time_best_of(reps, [&] { kern::mm_nn(a.data(), b.data(), c_omp.data(), m, k, n); });
  char name[64];
  std::snprintf(name, sizeof(name), "mm_nn %" PRId64 "x%" PRId64 "x%" PRId64, m, k, n);
  report(name, t_ref, t_omp, bits_equal(c_ref, c_omp));

  // Gradient-side kernels at the same shape.
  const auto g = random_vec(m * n, rng);
  std::vector<double> acc_ref(static_cast<size_t>(m * k), 0.0), acc_omp(acc_ref.size(), 0.0);
  const double tr2 = time_best_of(reps, [&] {
    std::fill(acc_ref.begin(), acc_ref.end(), 0.0);
    kern::ref::mm_nt_acc(g.data(), b.data(), acc_ref.data(), m, k, n);
  });
  const double to2 = time_best_of(reps, [&] {
    std::fill(acc_omp.begin(), acc_omp.end(), 0.0);
    kern::mm_nt_acc(g.data(), b.data(), acc_omp.data(), m, k, n);
  });
  std::snprintf(name, sizeof(name), "mm_nt_acc %" PRId64 "x%" PRId64 "x%" PRId64, m, k, n);
  report(name, tr2, to2, bits_equal(acc_ref, acc_omp));

  std::vector<double> acc3_ref(static_cast<size_t>(k * n), 0.0), acc3_omp(acc3_ref.size(), 0.0);
  const double tr3 = time_best_of(reps, [&] {
    std::fill(acc3_ref.begin(), acc3_ref.end(), 0.0);
    kern::ref::mm_tn_acc(a.data(), g.data(), acc3_ref.data(), m, k, n);
  });
  const double to3 = time_best_of(reps, [&] {
    std::fill(acc3_omp.begin(), acc3_omp.end(), 0.0);
    kern::mm_tn_acc(a.data(), g.data(), acc3_omp.data(), m, k, n);
  });
  std::snprintf(name, sizeof(name), "mm_tn_acc %" PRId64 "x%" PRId64 "x%" PRId64, m, k, n);
  report(name, tr3, to3, bits_equal(acc3_ref, acc3_omp));
}

void bench_softmax(int64_t rows, int64_t cols, int reps, Rng& rng) {
  const auto x = random_vec(rows * cols, rng);
  std::vector<double> y_ref(x.size()), y_omp(x.size());
  const double t_ref =
      time_best_of(reps, [&] { kern::ref::softmax_rows(x.data(), y_ref.data(), rows, cols); });
  const double t_omp =
      time_best_of(reps, [&] { kern::softmax_rows(x.data(), y_omp.data(), rows, cols); });
  char name[64];
  std::snprintf(name, sizeof(name), "softmax %" PRId64 "x%" PRId64, rows, cols);
  report(name, t_ref, t_omp, bits_equal(y_ref, y_omp));
}

double silu_like(double x) { return x / (1.0 + std::exp(-x)); }

void bench_map(int64_t n, int reps, Rng& rng) {
  const auto x = random_vec(n, rng);
  std::vector<double> y_ref(x.size()), y_omp(x.size());
  const double t_ref = time_best_of(reps, [&] {
    for (int64_t i = 0; i < n; ++i) y_ref[static_cast<size_t>(i)] = silu_like(x[static_cast<size_t>(i)]);
  });
  const double t_omp =
      time_best_of(reps, [&] { kern::map_unary(x.data(), y_omp.data(), n, &silu_like); });
  char name[64];
  std::snprintf(name, sizeof(name), "map_unary %" PRId64, n);
  report(name, t_ref, t_omp, bits_equal(y_ref, y_omp));
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  if (argc > 1) reps = std::max(1, std::atoi(argv[1]));

#ifdef _OPENMP
  std::printf("openmp: %d threads\n", omp_get_max_threads());
#else
  std::printf("openmp: disabled in this build\n");
#endif

  Rng rng(42);
  bench_matmul(256, 256, 256, reps, rng);
  bench_matmul(512, 512, 512, reps, rng);
  bench_matmul(64, 1024, 64, reps, rng);
  bench_softmax(2048, 2048, reps, rng);
  bench_softmax(64, 65536, reps, rng);
  bench_map(1 << 22, reps, rng);

  if (g_failures > 0) {
    std::printf("%d kernel(s) diverged from the reference\n", g_failures);
    return 1;
  }
  return 0;
}
