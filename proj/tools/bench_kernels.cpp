// SPDX-License-Identifier: Apache-2.0
//
// Timing comparison of the OpenMP kernels against the serial reference.
// Usage: bench_kernels [repeats]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ubt/kernels.hpp"
#include "ubt/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int repeats) {
  // One warmup, then best-of-repeats.
  fn();
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = Clock::now();
    fn();
    const auto t1 = Clock::now();
    const double ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (ms < best) best = ms;
  }
  return best;
}

std::vector<double> random_vec(ubt::Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

void bench_matmul(ubt::Rng& rng, std::size_t m, std::size_t k, std::size_t n,
                  int repeats) {
  const std::vector<double> a = random_vec(rng, m * k);
  const std::vector<double> b = random_vec(rng, k * n);
  std::vector<double> out(m * n);
  const double serial = time_ms(
      [&] {
        ubt::kernels::serial::matmul(a.data(), b.data(), out.data(), m, k, n);
      },
      repeats);
  const double parallel = time_ms(
      [&] { ubt::kernels::matmul(a.data(), b.data(), out.data(), m, k, n); },
      repeats);
  std::printf("matmul %4zux%4zux%4zu  serial %8.3f ms  openmp %8.3f ms  "
              "speedup %5.2fx\n",
              m, k, n, serial, parallel, serial / parallel);
}

void bench_info_nce(ubt::Rng& rng, std::size_t n, int repeats) {
  const std::vector<double> sim = random_vec(rng, n * n);
  std::vector<double> rows(n), cols(n), dsim(n * n, 0.0);
  const double serial = time_ms(
      [&] {
        ubt::kernels::serial::info_nce_forward(sim.data(), n, 0.07,
                                               rows.data(), cols.data());
        ubt::kernels::serial::info_nce_backward(sim.data(), n, 0.07, 1.0,
                                                dsim.data());
      },
      repeats);
  const double parallel = time_ms(
      [&] {
        ubt::kernels::info_nce_forward(sim.data(), n, 0.07, rows.data(),
                                       cols.data());
        ubt::kernels::info_nce_backward(sim.data(), n, 0.07, 1.0,
                                        dsim.data());
      },
      repeats);
  std::printf("info_nce n=%5zu       serial %8.3f ms  openmp %8.3f ms  "
              "speedup %5.2fx\n",
              n, serial, parallel, serial / parallel);
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
#ifdef _OPENMP
  std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
  std::printf("built without openmp; both columns run serial code\n");
#endif
  ubt::Rng rng(42);
  bench_matmul(rng, 256, 256, 256, repeats);
  bench_matmul(rng, 512, 512, 512, repeats);
  bench_matmul(rng, 1024, 256, 64, repeats);
  bench_info_nce(rng, 256, repeats);
  bench_info_nce(rng, 1024, repeats);
  return 0;
}
