// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>

namespace ubt::kernels {

// Dense kernels behind the tape ops and the inference path. Each kernel in
// this namespace is OpenMP-parallel over independent output elements; the
// per-element accumulation order is fixed, so results are bit-identical to
// the serial reference regardless of thread count. `ubt::kernels::serial`
// holds the reference implementations used by the equivalence tests and the
// benchmark target.
//
// Matrix arguments are row-major. Dimension convention: the result is m x n
// with contraction length k.

// out = A(m x k) * B(k x n); accumulate adds into out instead of overwriting.
void matmul(const double* a, const double* b, double* out, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate = false);

// out = A(m x k) * B(n x k)^T.
void matmul_nt(const double* a, const double* b, double* out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);

// out = A(k x m)^T * B(k x n).
void matmul_tn(const double* a, const double* b, double* out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);

// out = X(rows x cols) with `bias` (length cols) added to every row.
void add_bias(const double* x, const double* bias, double* out,
              std::size_t rows, std::size_t cols);

void tanh_forward(const double* x, double* out, std::size_t n);
// dx += g * (1 - y^2) where y = tanh(x).
void tanh_backward(const double* y, const double* g, double* dx,
                   std::size_t n);

// norms[r] = ||row r||_2.
void row_norms(const double* x, double* norms, std::size_t rows,
               std::size_t cols);
// out[r,:] = x[r,:] / norms[r].
void scale_rows(const double* x, const double* norms, double* out,
                std::size_t rows, std::size_t cols);
// dx[r,:] += (g[r,:] - (g[r,:] . y[r,:]) y[r,:]) / norms[r].
void l2_normalize_rows_backward(const double* y, const double* norms,
                                const double* g, double* dx, std::size_t rows,
                                std::size_t cols);

// out[r] = A[r,:] . B[r,:].
void rowwise_dot(const double* a, const double* b, double* out,
                 std::size_t rows, std::size_t cols);

// Mean of the embedding-table rows selected by non-pad tokens, per caption.
// tokens is n x len (row-major ids); counts[i] receives the non-pad count.
void embed_mean_pool(const double* table, const std::int32_t* tokens,
                     std::size_t n, std::size_t len, std::int32_t pad_id,
                     std::size_t dim, double* out, std::size_t* counts);

// Bidirectional InfoNCE on a similarity matrix. row_terms[i] and
// col_terms[j] receive log softmax_row(i,i) and log softmax_col(j,j); the
// loss is their sum scaled by -1/(2n), accumulated serially in index order.
double info_nce_forward(const double* sim, std::size_t n, double tau,
                        double* row_terms, double* col_terms);
// dsim += g * dLoss/dsim for the loss above.
void info_nce_backward(const double* sim, std::size_t n, double tau, double g,
                       double* dsim);

namespace serial {
void matmul(const double* a, const double* b, double* out, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate = false);
void matmul_nt(const double* a, const double* b, double* out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);
void matmul_tn(const double* a, const double* b, double* out, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);
void add_bias(const double* x, const double* bias, double* out,
              std::size_t rows, std::size_t cols);
void tanh_forward(const double* x, double* out, std::size_t n);
void tanh_backward(const double* y, const double* g, double* dx,
                   std::size_t n);
void row_norms(const double* x, double* norms, std::size_t rows,
               std::size_t cols);
void scale_rows(const double* x, const double* norms, double* out,
                std::size_t rows, std::size_t cols);
void l2_normalize_rows_backward(const double* y, const double* norms,
                                const double* g, double* dx, std::size_t rows,
                                std::size_t cols);
void rowwise_dot(const double* a, const double* b, double* out,
                 std::size_t rows, std::size_t cols);
void embed_mean_pool(const double* table, const std::int32_t* tokens,
                     std::size_t n, std::size_t len, std::int32_t pad_id,
                     std::size_t dim, double* out, std::size_t* counts);
double info_nce_forward(const double* sim, std::size_t n, double tau,
                        double* row_terms, double* col_terms);
void info_nce_backward(const double* sim, std::size_t n, double tau, double g,
                       double* dsim);
}  // namespace serial

}  // namespace ubt::kernels
