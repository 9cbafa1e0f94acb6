// SPDX-License-Identifier: Apache-2.0
//
// Test-only finite-difference oracle. Central differences over every
// parameter component; independent of the tape's backward path.
#pragma once

#include <cmath>

#include "ubt/param_set.hpp"

namespace ubt::testing {

// loss_fn: double(const ParamSet&). Returns central-difference gradients.
template <typename LossFn>
ParamSet finite_difference_grads(const ParamSet& params, LossFn&& loss_fn,
                                 double h = 1e-5) {
  ParamSet grads;
  for (const auto& [name, p] : params) {
    Tensor g = Tensor::zeros(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) {
      ParamSet plus = params;
      plus.mutable_at(name)[i] += h;
      ParamSet minus = params;
      minus.mutable_at(name)[i] -= h;
      g[i] = (loss_fn(plus) - loss_fn(minus)) / (2.0 * h);
    }
    grads.insert(name, std::move(g));
  }
  return grads;
}

// Worst relative error between two gradient sets, with an absolute floor so
// near-zero components compare absolutely.
inline double max_rel_error(const ParamSet& a, const ParamSet& b) {
  double worst = 0.0;
  for (const auto& [name, ga] : a) {
    const Tensor& gb = b.at(name);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double denom =
          std::max({1.0, std::abs(ga[i]), std::abs(gb[i])});
      worst = std::max(worst, std::abs(ga[i] - gb[i]) / denom);
    }
  }
  return worst;
}

}  // namespace ubt::testing
