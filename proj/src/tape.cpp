// SPDX-License-Identifier: Apache-2.0
#include "ubt/tape.hpp"

#include <cmath>

#include "ubt/errors.hpp"
#include "ubt/kernels.hpp"

namespace ubt {

ValueId GradTape::push(Tensor value, bool needs_grad,
                       std::function<void()> backprop, const char* op_name) {
  value.require_finite(op_name);
  nodes_.push_back(Node{std::move(value), needs_grad, {},
                        needs_grad ? std::move(backprop) : nullptr});
  return nodes_.size() - 1;
}

Tensor& GradTape::adjoint(ValueId id) {
  if (adjoints_[id].empty()) {
    adjoints_[id] = Tensor::zeros(nodes_[id].value.shape());
  }
  return adjoints_[id];
}

void GradTape::check_rank2(ValueId id, const char* op) const {
  if (val(id).rank() != 2) {
    throw ShapeMismatchError(std::string(op) + ": rank-2 operand required, got " +
                             val(id).shape_string());
  }
}

ValueId GradTape::param(const std::string& name) {
  const Tensor& p = params_->at(name);
  const ValueId id = nodes_.size();
  nodes_.push_back(Node{p, true, name, nullptr});
  return id;
}

ValueId GradTape::constant(Tensor value) {
  value.require_finite("constant");
  nodes_.push_back(Node{std::move(value), false, {}, nullptr});
  return nodes_.size() - 1;
}

ValueId GradTape::add(ValueId a, ValueId b) {
  if (!val(a).same_shape(val(b))) {
    throw ShapeMismatchError("add: shape mismatch " + val(a).shape_string() +
                             " vs " + val(b).shape_string());
  }
  Tensor out(val(a).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = val(a)[i] + val(b)[i];
  const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  const ValueId id = nodes_.size();
  return push(std::move(out), ng, [this, a, b, id] {
    const Tensor& g = adjoints_[id];
    if (nodes_[a].needs_grad) {
      Tensor& da = adjoint(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (nodes_[b].needs_grad) {
      Tensor& db = adjoint(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
    }
  }, "add");
}

ValueId GradTape::sub(ValueId a, ValueId b) {
  if (!val(a).same_shape(val(b))) {
    throw ShapeMismatchError("sub: shape mismatch");
  }
  Tensor out(val(a).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = val(a)[i] - val(b)[i];
  const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  const ValueId id = nodes_.size();
  return push(std::move(out), ng, [this, a, b, id] {
    const Tensor& g = adjoints_[id];
    if (nodes_[a].needs_grad) {
      Tensor& da = adjoint(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (nodes_[b].needs_grad) {
      Tensor& db = adjoint(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
    }
  }, "sub");
}

ValueId GradTape::mul(ValueId a, ValueId b) {
  if (!val(a).same_shape(val(b))) {
    throw ShapeMismatchError("mul: shape mismatch");
  }
  Tensor out(val(a).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = val(a)[i] * val(b)[i];
  const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  const ValueId id = nodes_.size();
  return push(std::move(out), ng, [this, a, b, id] {
    const Tensor& g = adjoints_[id];
    if (nodes_[a].needs_grad) {
      Tensor& da = adjoint(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * val(b)[i];
    }
    if (nodes_[b].needs_grad) {
      Tensor& db = adjoint(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * val(a)[i];
    }
  }, "mul");
}

ValueId GradTape::square(ValueId a) {
  Tensor out(val(a).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = val(a)[i] * val(a)[i];
  const ValueId id = nodes_.size();
  return push(std::move(out), nodes_[a].needs_grad, [this, a, id] {
    const Tensor& g = adjoints_[id];
    Tensor& da = adjoint(a);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += 2.0 * g[i] * val(a)[i];
  }, "square");
}

ValueId GradTape::scale(ValueId a, double c) {
  Tensor out(val(a).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = val(a)[i] * c;
  const ValueId id = nodes_.size();
  return push(std::move(out), nodes_[a].needs_grad, [this, a, c, id] {
    const Tensor& g = adjoints_[id];
    Tensor& da = adjoint(a);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += c * g[i];
  }, "scale");
}

ValueId GradTape::add_scalar(ValueId a, double c) {
  Tensor out(val(a).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = val(a)[i] + c;
  const ValueId id = nodes_.size();
  return push(std::move(out), nodes_[a].needs_grad, [this, a, id] {
    const Tensor& g = adjoints_[id];
    Tensor& da = adjoint(a);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
  }, "add_scalar");
}

ValueId GradTape::matmul(ValueId a, ValueId b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  const std::size_t m = val(a).rows(), k = val(a).cols(), n = val(b).cols();
  if (val(b).rows() != k) {
    throw ShapeMismatchError("matmul: inner dimension mismatch");
  }
  Tensor out({m, n});
  kernels::matmul(val(a).data(), val(b).data(), out.data(), m, k, n);
  const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  const ValueId id = nodes_.size();
  return push(std::move(out), ng, [this, a, b, m, k, n, id] {
    const Tensor& g = adjoints_[id];
    if (nodes_[a].needs_grad) {
      // dA += G * B^T : (m x n)(k x n)^T
      kernels::matmul_nt(g.data(), val(b).data(), adjoint(a).data(), m, n, k,
                         true);
    }
    if (nodes_[b].needs_grad) {
      // dB += A^T * G : (m x k)^T (m x n)
      kernels::matmul_tn(val(a).data(), g.data(), adjoint(b).data(), k, m, n,
                         true);
    }
  }, "matmul");
}

ValueId GradTape::matmul_nt(ValueId a, ValueId b) {
  check_rank2(a, "matmul_nt");
  check_rank2(b, "matmul_nt");
  const std::size_t m = val(a).rows(), k = val(a).cols(), n = val(b).rows();
  if (val(b).cols() != k) {
    throw ShapeMismatchError("matmul_nt: inner dimension mismatch");
  }
  Tensor out({m, n});
  kernels::matmul_nt(val(a).data(), val(b).data(), out.data(), m, k, n);
  const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  const ValueId id = nodes_.size();
  return push(std::move(out), ng, [this, a, b, m, k, n, id] {
    const Tensor& g = adjoints_[id];
    if (nodes_[a].needs_grad) {
      // dA += G * B : (m x n)(n x k)
      kernels::matmul(g.data(), val(b).data(), adjoint(a).data(), m, n, k,
                      true);
    }
    if (nodes_[b].needs_grad) {
      // dB += G^T * A : (m x n)^T (m x k)
      kernels::matmul_tn(g.data(), val(a).data(), adjoint(b).data(), n, m, k,
                         true);
    }
  }, "matmul_nt");
}

ValueId GradTape::add_bias(ValueId x, ValueId bias) {
  check_rank2(x, "add_bias");
  const std::size_t rows = val(x).rows(), cols = val(x).cols();
  if (val(bias).rank() != 1 || val(bias).size() != cols) {
    throw ShapeMismatchError("add_bias: bias length mismatch");
  }
  Tensor out({rows, cols});
  kernels::add_bias(val(x).data(), val(bias).data(), out.data(), rows, cols);
  const bool ng = nodes_[x].needs_grad || nodes_[bias].needs_grad;
  const ValueId id = nodes_.size();
  return push(std::move(out), ng, [this, x, bias, rows, cols, id] {
    const Tensor& g = adjoints_[id];
    if (nodes_[x].needs_grad) {
      Tensor& dx = adjoint(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    }
    if (nodes_[bias].needs_grad) {
      Tensor& db = adjoint(bias);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
      }
    }
  }, "add_bias");
}

ValueId GradTape::tanh(ValueId a) {
  Tensor out(val(a).shape());
  kernels::tanh_forward(val(a).data(), out.data(), out.size());
  const ValueId id = nodes_.size();
  return push(std::move(out), nodes_[a].needs_grad, [this, a, id] {
    const Tensor& g = adjoints_[id];
    kernels::tanh_backward(nodes_[id].value.data(), g.data(),
                           adjoint(a).data(), g.size());
  }, "tanh");
}

ValueId GradTape::l2_normalize_rows(ValueId a) {
  check_rank2(a, "l2_normalize_rows");
  const std::size_t rows = val(a).rows(), cols = val(a).cols();
  std::vector<double> norms(rows);
  kernels::row_norms(val(a).data(), norms.data(), rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (norms[r] <= kNormFloor) {
      throw ZeroNormError("l2_normalize_rows: row " + std::to_string(r) +
                          " norm below floor");
    }
  }
  Tensor out({rows, cols});
  kernels::scale_rows(val(a).data(), norms.data(), out.data(), rows, cols);
  const ValueId id = nodes_.size();
  return push(std::move(out), nodes_[a].needs_grad,
              [this, a, rows, cols, norms = std::move(norms), id] {
    const Tensor& g = adjoints_[id];
    kernels::l2_normalize_rows_backward(nodes_[id].value.data(), norms.data(),
                                        g.data(), adjoint(a).data(), rows,
                                        cols);
  }, "l2_normalize_rows");
}

ValueId GradTape::embed_mean_pool(ValueId table, const TokenBatch& tokens) {
  check_rank2(table, "embed_mean_pool");
  const std::size_t vocab = val(table).rows(), dim = val(table).cols();
  for (const std::int32_t tok : tokens.ids) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= vocab) {
      throw ShapeMismatchError("embed_mean_pool: token id out of vocab range");
    }
  }
  Tensor out({tokens.n, dim});
  std::vector<std::size_t> counts(tokens.n);
  kernels::embed_mean_pool(val(table).data(), tokens.ids.data(), tokens.n,
                           tokens.len, tokens.pad_id, dim, out.data(),
                           counts.data());
  for (std::size_t i = 0; i < tokens.n; ++i) {
    if (counts[i] == 0) {
      throw EmptyCaptionError("embed_mean_pool: caption " + std::to_string(i) +
                              " has no non-pad tokens");
    }
  }
  const ValueId id = nodes_.size();
  return push(std::move(out), nodes_[table].needs_grad,
              [this, table, tokens, dim, counts = std::move(counts), id] {
    const Tensor& g = adjoints_[id];
    Tensor& dt = adjoint(table);
    // Serial scatter: rows of the table are shared across captions.
    for (std::size_t i = 0; i < tokens.n; ++i) {
      const double inv = 1.0 / static_cast<double>(counts[i]);
      for (std::size_t t = 0; t < tokens.len; ++t) {
        const std::int32_t tok = tokens.ids[i * tokens.len + t];
        if (tok == tokens.pad_id) continue;
        for (std::size_t c = 0; c < dim; ++c) {
          dt[static_cast<std::size_t>(tok) * dim + c] +=
              g[i * dim + c] * inv;
        }
      }
    }
  }, "embed_mean_pool");
}

ValueId GradTape::rowwise_dot(ValueId a, ValueId b) {
  check_rank2(a, "rowwise_dot");
  if (!val(a).same_shape(val(b))) {
    throw ShapeMismatchError("rowwise_dot: shape mismatch");
  }
  const std::size_t rows = val(a).rows(), cols = val(a).cols();
  Tensor out({rows});
  kernels::rowwise_dot(val(a).data(), val(b).data(), out.data(), rows, cols);
  const bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  const ValueId id = nodes_.size();
  return push(std::move(out), ng, [this, a, b, rows, cols, id] {
    const Tensor& g = adjoints_[id];
    if (nodes_[a].needs_grad) {
      Tensor& da = adjoint(a);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          da[r * cols + c] += g[r] * val(b)[r * cols + c];
        }
      }
    }
    if (nodes_[b].needs_grad) {
      Tensor& db = adjoint(b);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          db[r * cols + c] += g[r] * val(a)[r * cols + c];
        }
      }
    }
  }, "rowwise_dot");
}

ValueId GradTape::sum_all(ValueId a) {
  double total = 0.0;
  for (const double v : val(a).values()) total += v;
  const ValueId id = nodes_.size();
  return push(Tensor::scalar(total), nodes_[a].needs_grad, [this, a, id] {
    const double g = adjoints_[id][0];
    Tensor& da = adjoint(a);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
  }, "sum_all");
}

ValueId GradTape::mean_all(ValueId a) {
  double total = 0.0;
  for (const double v : val(a).values()) total += v;
  const double inv = 1.0 / static_cast<double>(val(a).size());
  const ValueId id = nodes_.size();
  return push(Tensor::scalar(total * inv), nodes_[a].needs_grad,
              [this, a, inv, id] {
    const double g = adjoints_[id][0] * inv;
    Tensor& da = adjoint(a);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
  }, "mean_all");
}

ValueId GradTape::info_nce(ValueId sim, double tau) {
  check_rank2(sim, "info_nce");
  const std::size_t n = val(sim).rows();
  if (val(sim).cols() != n) {
    throw ShapeMismatchError("info_nce: similarity matrix must be square");
  }
  if (tau <= 0.0) {
    throw InvalidConfigError("info_nce: tau must be positive");
  }
  std::vector<double> row_terms(n), col_terms(n);
  const double loss = kernels::info_nce_forward(val(sim).data(), n, tau,
                                                row_terms.data(),
                                                col_terms.data());
  const ValueId id = nodes_.size();
  return push(Tensor::scalar(loss), nodes_[sim].needs_grad,
              [this, sim, n, tau, id] {
    const double g = adjoints_[id][0];
    kernels::info_nce_backward(val(sim).data(), n, tau, g,
                               adjoint(sim).data());
  }, "info_nce");
}

ParamSet GradTape::backward(ValueId loss) {
  if (val(loss).size() != 1) {
    throw NonScalarLossError("backward: loss node is not scalar, shape " +
                             val(loss).shape_string());
  }
  adjoints_.assign(nodes_.size(), Tensor());
  adjoints_[loss] = Tensor::scalar(1.0);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (!nodes_[i].needs_grad || adjoints_[i].empty()) continue;
    if (nodes_[i].backprop) nodes_[i].backprop();
  }
  ParamSet grads;
  for (const auto& [name, p] : *params_) {
    Tensor g = Tensor::zeros(p.shape());
    // Collect adjoints from every leaf bound to this name.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].param_name == name && !adjoints_[i].empty()) {
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += adjoints_[i][j];
      }
    }
    if (!g.all_finite()) {
      throw NonFiniteGradientError("backward: non-finite gradient for " +
                                   name);
    }
    grads.insert(name, std::move(g));
  }
  nodes_.clear();
  adjoints_.clear();
  return grads;
}

}  // namespace ubt
