// SPDX-License-Identifier: Apache-2.0
#include "ubt/param_set.hpp"

namespace ubt {

void sgd_step(ParamSet& params, const ParamSet& grads, double lr,
              Direction direction) {
  if (!(lr > 0.0)) {
    throw InvalidConfigError("sgd_step: learning rate must be positive");
  }
  const double step = direction == Direction::kDescend ? -lr : lr;
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) continue;
    Tensor& p = params.mutable_at(name);
    if (!p.same_shape(g)) {
      throw ShapeMismatchError("sgd_step: gradient shape mismatch for " +
                               name);
    }
    if (!g.all_finite()) {
      throw NonFiniteGradientError("sgd_step: non-finite gradient for " +
                                   name);
    }
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += step * g[i];
    p.require_finite("parameter " + name);
  }
}

}  // namespace ubt
