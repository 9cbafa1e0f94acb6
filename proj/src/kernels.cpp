// SPDX-License-Identifier: Apache-2.0
#include "ubt/kernels.hpp"

#include <cmath>
#include <vector>

namespace ubt::kernels {

// ---------------------------------------------------------------------------
// Serial reference implementations.
// ---------------------------------------------------------------------------

namespace serial {

void matmul(const double* a, const double* b, double* out, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      if (accumulate)
        out[i * n + j] += acc;
      else
        out[i * n + j] = acc;
    }
  }
}

void matmul_nt(const double* a, const double* b, double* out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      if (accumulate)
        out[i * n + j] += acc;
      else
        out[i * n + j] = acc;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      if (accumulate)
        out[i * n + j] += acc;
      else
        out[i * n + j] = acc;
    }
  }
}

void add_bias(const double* x, const double* bias, double* out,
              std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = x[r * cols + c] + bias[c];
    }
  }
}

void tanh_forward(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
}

void tanh_backward(const double* y, const double* g, double* dx,
                   std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
}

void row_norms(const double* x, double* norms, std::size_t rows,
               std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      sq += x[r * cols + c] * x[r * cols + c];
    }
    norms[r] = std::sqrt(sq);
  }
}

void scale_rows(const double* x, const double* norms, double* out,
                std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = x[r * cols + c] / norms[r];
    }
  }
}

void l2_normalize_rows_backward(const double* y, const double* norms,
                                const double* g, double* dx, std::size_t rows,
                                std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double gy = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      gy += g[r * cols + c] * y[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) {
      dx[r * cols + c] += (g[r * cols + c] - gy * y[r * cols + c]) / norms[r];
    }
  }
}

void rowwise_dot(const double* a, const double* b, double* out,
                 std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      acc += a[r * cols + c] * b[r * cols + c];
    }
    out[r] = acc;
  }
}

void embed_mean_pool(const double* table, const std::int32_t* tokens,
                     std::size_t n, std::size_t len, std::int32_t pad_id,
                     std::size_t dim, double* out, std::size_t* counts) {
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out + i * dim;
    for (std::size_t c = 0; c < dim; ++c) row[c] = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < len; ++t) {
      const std::int32_t tok = tokens[i * len + t];
      if (tok == pad_id) continue;
      const double* e = table + static_cast<std::size_t>(tok) * dim;
      for (std::size_t c = 0; c < dim; ++c) row[c] += e[c];
      ++count;
    }
    counts[i] = count;
    if (count > 0) {
      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t c = 0; c < dim; ++c) row[c] *= inv;
    }
  }
}

namespace {

// log(sum_j exp(v[j]/tau)) over a strided slice, max-shifted.
double logsumexp_strided(const double* v, std::size_t n, std::size_t stride,
                         double tau) {
  double mx = v[0] / tau;
  for (std::size_t j = 1; j < n; ++j) {
    const double s = v[j * stride] / tau;
    if (s > mx) mx = s;
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    acc += std::exp(v[j * stride] / tau - mx);
  }
  return mx + std::log(acc);
}

}  // namespace

double info_nce_forward(const double* sim, std::size_t n, double tau,
                        double* row_terms, double* col_terms) {
  for (std::size_t i = 0; i < n; ++i) {
    const double lse = logsumexp_strided(sim + i * n, n, 1, tau);
    row_terms[i] = sim[i * n + i] / tau - lse;
  }
  for (std::size_t j = 0; j < n; ++j) {
    const double lse = logsumexp_strided(sim + j, n, n, tau);
    col_terms[j] = sim[j * n + j] / tau - lse;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += row_terms[i];
  for (std::size_t j = 0; j < n; ++j) total += col_terms[j];
  return -total / (2.0 * static_cast<double>(n));
}

void info_nce_backward(const double* sim, std::size_t n, double tau, double g,
                       double* dsim) {
  std::vector<double> row_lse(n), col_lse(n);
  for (std::size_t i = 0; i < n; ++i) {
    row_lse[i] = logsumexp_strided(sim + i * n, n, 1, tau);
  }
  for (std::size_t j = 0; j < n; ++j) {
    col_lse[j] = logsumexp_strided(sim + j, n, n, tau);
  }
  const double scale = -g / (2.0 * static_cast<double>(n) * tau);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double s = sim[i * n + j] / tau;
      const double p_row = std::exp(s - row_lse[i]);
      const double p_col = std::exp(s - col_lse[j]);
      const double delta = (i == j) ? 1.0 : 0.0;
      dsim[i * n + j] += scale * ((delta - p_row) + (delta - p_col));
    }
  }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP kernels. Parallelism is only over independent output elements; all
// reductions stay serial in index order so results match the reference bit
// for bit.
// ---------------------------------------------------------------------------

void matmul(const double* a, const double* b, double* out, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      if (accumulate)
        out[i * n + j] += acc;
      else
        out[i * n + j] = acc;
    }
  }
}

void matmul_nt(const double* a, const double* b, double* out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      if (accumulate)
        out[i * n + j] += acc;
      else
        out[i * n + j] = acc;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      if (accumulate)
        out[i * n + j] += acc;
      else
        out[i * n + j] = acc;
    }
  }
}

void add_bias(const double* x, const double* bias, double* out,
              std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = x[r * cols + c] + bias[c];
    }
  }
}

void tanh_forward(const double* x, double* out, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
}

void tanh_backward(const double* y, const double* g, double* dx,
                   std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
}

void row_norms(const double* x, double* norms, std::size_t rows,
               std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      sq += x[r * cols + c] * x[r * cols + c];
    }
    norms[r] = std::sqrt(sq);
  }
}

void scale_rows(const double* x, const double* norms, double* out,
                std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = x[r * cols + c] / norms[r];
    }
  }
}

void l2_normalize_rows_backward(const double* y, const double* norms,
                                const double* g, double* dx, std::size_t rows,
                                std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    double gy = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      gy += g[r * cols + c] * y[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) {
      dx[r * cols + c] += (g[r * cols + c] - gy * y[r * cols + c]) / norms[r];
    }
  }
}

void rowwise_dot(const double* a, const double* b, double* out,
                 std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      acc += a[r * cols + c] * b[r * cols + c];
    }
    out[r] = acc;
  }
}

void embed_mean_pool(const double* table, const std::int32_t* tokens,
                     std::size_t n, std::size_t len, std::int32_t pad_id,
                     std::size_t dim, double* out, std::size_t* counts) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out + i * dim;
    for (std::size_t c = 0; c < dim; ++c) row[c] = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < len; ++t) {
      const std::int32_t tok = tokens[i * len + t];
      if (tok == pad_id) continue;
      const double* e = table + static_cast<std::size_t>(tok) * dim;
      for (std::size_t c = 0; c < dim; ++c) row[c] += e[c];
      ++count;
    }
    counts[i] = count;
    if (count > 0) {
      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t c = 0; c < dim; ++c) row[c] *= inv;
    }
  }
}

namespace {

double logsumexp_strided(const double* v, std::size_t n, std::size_t stride,
                         double tau) {
  double mx = v[0] / tau;
  for (std::size_t j = 1; j < n; ++j) {
    const double s = v[j * stride] / tau;
    if (s > mx) mx = s;
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    acc += std::exp(v[j * stride] / tau - mx);
  }
  return mx + std::log(acc);
}

}  // namespace

double info_nce_forward(const double* sim, std::size_t n, double tau,
                        double* row_terms, double* col_terms) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const double lse = logsumexp_strided(sim + i * n, n, 1, tau);
    row_terms[i] = sim[i * n + i] / tau - lse;
  }
#pragma omp parallel for schedule(static)
  for (std::size_t j = 0; j < n; ++j) {
    const double lse = logsumexp_strided(sim + j, n, n, tau);
    col_terms[j] = sim[j * n + j] / tau - lse;
  }
  // Serial final sum keeps the result independent of thread count.
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += row_terms[i];
  for (std::size_t j = 0; j < n; ++j) total += col_terms[j];
  return -total / (2.0 * static_cast<double>(n));
}

void info_nce_backward(const double* sim, std::size_t n, double tau, double g,
                       double* dsim) {
  std::vector<double> row_lse(n), col_lse(n);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    row_lse[i] = logsumexp_strided(sim + i * n, n, 1, tau);
  }
#pragma omp parallel for schedule(static)
  for (std::size_t j = 0; j < n; ++j) {
    col_lse[j] = logsumexp_strided(sim + j, n, n, tau);
  }
  const double scale = -g / (2.0 * static_cast<double>(n) * tau);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double s = sim[i * n + j] / tau;
      const double p_row = std::exp(s - row_lse[i]);
      const double p_col = std::exp(s - col_lse[j]);
      const double delta = (i == j) ? 1.0 : 0.0;
      dsim[i * n + j] += scale * ((delta - p_row) + (delta - p_col));
    }
  }
}

}  // namespace ubt::kernels
