// SPDX-License-Identifier: Apache-2.0
//
// The OpenMP kernels must match the serial reference bit for bit: they
// parallelize only over independent outputs, never over an accumulation.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstring>
#include <vector>

#include "ubt/kernels.hpp"
#include "ubt/rng.hpp"

using namespace ubt;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matmul family matches serial bitwise") {
  Rng rng(1);
  for (const auto& [m, k, n] :
       std::vector<std::array<std::size_t, 3>>{
           {1, 1, 1}, {2, 3, 4}, {7, 5, 9}, {16, 33, 8}, {64, 17, 31}}) {
    const auto a = random_vec(rng, m * k);
    const auto b = random_vec(rng, k * n);
    std::vector<double> out_p(m * n), out_s(m * n);
    kernels::matmul(a.data(), b.data(), out_p.data(), m, k, n);
    kernels::serial::matmul(a.data(), b.data(), out_s.data(), m, k, n);
    CHECK(bit_equal(out_p, out_s));

    const auto bt = random_vec(rng, n * k);
    kernels::matmul_nt(a.data(), bt.data(), out_p.data(), m, k, n);
    kernels::serial::matmul_nt(a.data(), bt.data(), out_s.data(), m, k, n);
    CHECK(bit_equal(out_p, out_s));

    const auto at = random_vec(rng, k * m);
    const auto bn = random_vec(rng, k * n);
    kernels::matmul_tn(at.data(), bn.data(), out_p.data(), m, k, n);
    kernels::serial::matmul_tn(at.data(), bn.data(), out_s.data(), m, k, n);
    CHECK(bit_equal(out_p, out_s));

    // Accumulating variant.
    std::vector<double> acc_p = out_p, acc_s = out_p;
    kernels::matmul(a.data(), b.data(), acc_p.data(), m, k, n, true);
    kernels::serial::matmul(a.data(), b.data(), acc_s.data(), m, k, n, true);
    CHECK(bit_equal(acc_p, acc_s));
  }
}

TEST_CASE("rowwise kernels match serial bitwise") {
  Rng rng(2);
  const std::size_t rows = 23, cols = 17;
  const auto x = random_vec(rng, rows * cols);
  const auto y = random_vec(rng, rows * cols);
  const auto g = random_vec(rng, rows * cols);
  const auto bias = random_vec(rng, cols);

  std::vector<double> out_p(rows * cols), out_s(rows * cols);
  kernels::add_bias(x.data(), bias.data(), out_p.data(), rows, cols);
  kernels::serial::add_bias(x.data(), bias.data(), out_s.data(), rows, cols);
  CHECK(bit_equal(out_p, out_s));

  kernels::tanh_forward(x.data(), out_p.data(), x.size());
  kernels::serial::tanh_forward(x.data(), out_s.data(), x.size());
  CHECK(bit_equal(out_p, out_s));

  std::vector<double> dx_p(rows * cols, 0.1), dx_s(rows * cols, 0.1);
  kernels::tanh_backward(out_p.data(), g.data(), dx_p.data(), x.size());
  kernels::serial::tanh_backward(out_s.data(), g.data(), dx_s.data(),
                                 x.size());
  CHECK(bit_equal(dx_p, dx_s));

  std::vector<double> norms_p(rows), norms_s(rows);
  kernels::row_norms(x.data(), norms_p.data(), rows, cols);
  kernels::serial::row_norms(x.data(), norms_s.data(), rows, cols);
  CHECK(bit_equal(norms_p, norms_s));

  kernels::scale_rows(x.data(), norms_p.data(), out_p.data(), rows, cols);
  kernels::serial::scale_rows(x.data(), norms_s.data(), out_s.data(), rows,
                              cols);
  CHECK(bit_equal(out_p, out_s));

  std::fill(dx_p.begin(), dx_p.end(), 0.0);
  std::fill(dx_s.begin(), dx_s.end(), 0.0);
  kernels::l2_normalize_rows_backward(out_p.data(), norms_p.data(), g.data(),
                                      dx_p.data(), rows, cols);
  kernels::serial::l2_normalize_rows_backward(out_s.data(), norms_s.data(),
                                              g.data(), dx_s.data(), rows,
                                              cols);
  CHECK(bit_equal(dx_p, dx_s));

  std::vector<double> dot_p(rows), dot_s(rows);
  kernels::rowwise_dot(x.data(), y.data(), dot_p.data(), rows, cols);
  kernels::serial::rowwise_dot(x.data(), y.data(), dot_s.data(), rows, cols);
  CHECK(bit_equal(dot_p, dot_s));
}

TEST_CASE("embedding pool matches serial bitwise") {
  Rng rng(3);
  const std::size_t vocab = 11, dim = 6, n = 9, len = 5;
  const auto table = random_vec(rng, vocab * dim);
  std::vector<std::int32_t> tokens(n * len);
  for (auto& t : tokens) {
    t = static_cast<std::int32_t>(rng.uniform_int(vocab));
  }
  // Keep at least one non-pad token per caption (pad id 0).
  for (std::size_t i = 0; i < n; ++i) tokens[i * len] = 1;

  std::vector<double> out_p(n * dim), out_s(n * dim);
  std::vector<std::size_t> counts_p(n), counts_s(n);
  kernels::embed_mean_pool(table.data(), tokens.data(), n, len, 0, dim,
                           out_p.data(), counts_p.data());
  kernels::serial::embed_mean_pool(table.data(), tokens.data(), n, len, 0,
                                   dim, out_s.data(), counts_s.data());
  CHECK(bit_equal(out_p, out_s));
  CHECK(counts_p == counts_s);
}

TEST_CASE("info_nce matches serial bitwise") {
  Rng rng(4);
  for (const std::size_t n : {1u, 2u, 5u, 32u, 64u}) {
    const auto sim = random_vec(rng, n * n);
    std::vector<double> rows_p(n), cols_p(n), rows_s(n), cols_s(n);
    const double loss_p = kernels::info_nce_forward(sim.data(), n, 0.07,
                                                    rows_p.data(),
                                                    cols_p.data());
    const double loss_s = kernels::serial::info_nce_forward(
        sim.data(), n, 0.07, rows_s.data(), cols_s.data());
    CHECK(loss_p == loss_s);
    CHECK(bit_equal(rows_p, rows_s));
    CHECK(bit_equal(cols_p, cols_s));

    std::vector<double> dsim_p(n * n, 0.0), dsim_s(n * n, 0.0);
    kernels::info_nce_backward(sim.data(), n, 0.07, 1.3, dsim_p.data());
    kernels::serial::info_nce_backward(sim.data(), n, 0.07, 1.3,
                                       dsim_s.data());
    CHECK(bit_equal(dsim_p, dsim_s));
  }
}

TEST_CASE("repeat runs are bit-identical") {
  Rng rng(5);
  const std::size_t m = 31, k = 29, n = 37;
  const auto a = random_vec(rng, m * k);
  const auto b = random_vec(rng, k * n);
  std::vector<double> first(m * n), second(m * n);
  kernels::matmul(a.data(), b.data(), first.data(), m, k, n);
  kernels::matmul(a.data(), b.data(), second.data(), m, k, n);
  CHECK(bit_equal(first, second));
}
