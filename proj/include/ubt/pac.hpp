// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace ubt {

// Inputs to the minimum-unlearning-sample bound. The posterior/prior
// divergence is abstracted to the scalar kl_q; c0 is the absorbed constant
// of the relaxed bound.
struct PacInputs {
  double kl_q = 0.0;
  double c0 = 1.0;
  double r = 0.1;
  double eps = 0.5;
  double delta = 0.05;
};

// N0 = ((kl_q + c0) / (2 r^2))^(1/eps) + 1/2, the upper bound on the
// minimum sample count for which the relaxed generalization bound stays
// below the risk gap r.
double pac_min_samples(const PacInputs& inputs);

// sqrt((1/(2n-1)) * (kl_q + log((n+2)/delta))): the high-probability bound
// on the generalization gap at sample count n.
double pac_bound_rhs(double kl_q, std::size_t n, double delta);

// Smallest n >= 1 such that log(n+2)/(2n-1) <= (2n-1)^(-eps) holds across a
// sampled grid of [n, 10n] - a numerical witness for the crossover point.
std::size_t lemma_crossover_n(double eps);

}  // namespace ubt
