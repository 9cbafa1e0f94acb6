// SPDX-License-Identifier: Apache-2.0
#include "ubt/pac.hpp"

#include <cmath>

#include "ubt/errors.hpp"

namespace ubt {

namespace {

void check_eps(double eps) {
  if (!(eps > 0.0 && eps < 1.0)) {
    throw InvalidPacInputsError("eps must lie in (0, 1)");
  }
}

bool crossover_holds(double n, double eps) {
  const double lhs = std::log(n + 2.0) / (2.0 * n - 1.0);
  const double rhs = std::pow(2.0 * n - 1.0, -eps);
  return lhs <= rhs;
}

}  // namespace

double pac_min_samples(const PacInputs& inputs) {
  if (!(inputs.r > 0.0)) {
    throw InvalidPacInputsError("r must be positive");
  }
  check_eps(inputs.eps);
  if (inputs.kl_q < 0.0) {
    throw InvalidPacInputsError("kl_q must be nonnegative");
  }
  const double base = (inputs.kl_q + inputs.c0) / (2.0 * inputs.r * inputs.r);
  return std::pow(base, 1.0 / inputs.eps) + 0.5;
}

double pac_bound_rhs(double kl_q, std::size_t n, double delta) {
  if (kl_q < 0.0) {
    throw InvalidPacInputsError("kl_q must be nonnegative");
  }
  if (n < 1) {
    throw InvalidPacInputsError("n must be >= 1");
  }
  if (!(delta > 0.0 && delta < 1.0)) {
    throw InvalidPacInputsError("delta must lie in (0, 1)");
  }
  const double dn = static_cast<double>(n);
  return std::sqrt((kl_q + std::log((dn + 2.0) / delta)) / (2.0 * dn - 1.0));
}

std::size_t lemma_crossover_n(double eps) {
  check_eps(eps);
  // Scan upward; accept the first n where the inequality holds on a grid
  // covering [n, 10n]: all integers up to n+512 plus 256 log-spaced points.
  for (std::size_t n = 1; n <= 1u << 24; ++n) {
    bool ok = true;
    const double lo = static_cast<double>(n);
    const double hi = 10.0 * lo;
    const std::size_t dense_end = n + 512;
    for (std::size_t m = n; m <= dense_end && ok; ++m) {
      if (static_cast<double>(m) > hi) break;
      ok = crossover_holds(static_cast<double>(m), eps);
    }
    const double ratio = hi / lo;
    for (std::size_t s = 0; s <= 256 && ok; ++s) {
      const double m =
          lo * std::pow(ratio, static_cast<double>(s) / 256.0);
      ok = crossover_holds(m, eps);
    }
    if (ok) return n;
  }
  throw InvalidPacInputsError("lemma_crossover_n: no witness found");
}

}  // namespace ubt
