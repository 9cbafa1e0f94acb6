// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ubt/param_set.hpp"
#include "ubt/tensor.hpp"

namespace ubt {

using ValueId = std::size_t;

// Packed batch of token ids, n captions of fixed length.
struct TokenBatch {
  std::vector<std::int32_t> ids;  // row-major, n * len
  std::size_t n = 0;
  std::size_t len = 0;
  std::int32_t pad_id = 0;
};

// Reverse-mode gradient tape. A tape is built fresh for every training step:
// ops record their inputs and a backward closure, backward() walks the
// recording in reverse and returns per-parameter gradients, then clears the
// tape. Every op validates that its output is finite.
class GradTape {
 public:
  explicit GradTape(const ParamSet& params) : params_(&params) {}

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  // Leaf bound to a named parameter; gradients accumulate to it.
  ValueId param(const std::string& name);
  // Leaf with no gradient.
  ValueId constant(Tensor value);

  ValueId add(ValueId a, ValueId b);
  ValueId sub(ValueId a, ValueId b);
  ValueId mul(ValueId a, ValueId b);
  ValueId square(ValueId a);
  ValueId scale(ValueId a, double c);
  ValueId add_scalar(ValueId a, double c);
  ValueId matmul(ValueId a, ValueId b);
  // a * b^T with b given row-major as (n x k).
  ValueId matmul_nt(ValueId a, ValueId b);
  // Adds a length-cols bias vector to every row of a rank-2 value.
  ValueId add_bias(ValueId x, ValueId bias);
  ValueId tanh(ValueId a);
  // Rows scaled to unit norm; ZeroNormError below the norm floor.
  ValueId l2_normalize_rows(ValueId a);
  // Mean embedding of non-pad tokens per caption; EmptyCaptionError if a
  // caption has no non-pad token.
  ValueId embed_mean_pool(ValueId table, const TokenBatch& tokens);
  ValueId rowwise_dot(ValueId a, ValueId b);
  ValueId sum_all(ValueId a);
  ValueId mean_all(ValueId a);
  // Bidirectional InfoNCE over an n x n similarity matrix.
  ValueId info_nce(ValueId sim, double tau);

  const Tensor& value(ValueId id) const { return nodes_[id].value; }
  std::size_t node_count() const { return nodes_.size(); }

  // Runs the reverse pass from a scalar loss node, returning gradients for
  // every parameter in the bound ParamSet (zeros for parameters the loss
  // does not reach). Clears the tape.
  ParamSet backward(ValueId loss);

 private:
  struct Node {
    Tensor value;
    bool needs_grad = false;
    std::string param_name;  // non-empty only for parameter leaves
    std::function<void()> backprop;
  };

  ValueId push(Tensor value, bool needs_grad, std::function<void()> backprop,
               const char* op_name);
  Tensor& adjoint(ValueId id);
  const Tensor& val(ValueId id) const { return nodes_[id].value; }
  void check_rank2(ValueId id, const char* op) const;

  const ParamSet* params_;
  std::vector<Node> nodes_;
  std::vector<Tensor> adjoints_;
};

}  // namespace ubt
