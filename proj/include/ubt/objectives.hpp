// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ubt/dataset.hpp"
#include "ubt/model.hpp"
#include "ubt/param_set.hpp"

namespace ubt {

enum class LossKind { kContrastive, kOverfit, kUnlearn };

std::string loss_kind_name(LossKind kind);

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 1e-2;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  Direction direction = Direction::kDescend;
  bool shuffle = true;
  // Weight of the squared-deviation term in the overfit objective; the
  // printed objective is an unweighted sum.
  double overfit_mse_weight = 1.0;

  void validate() const;
};

// Per-epoch mean loss per term, emitted as CSV rows (stage, epoch, term,
// value) by the CLI.
struct LossReport {
  struct Row {
    std::size_t epoch;
    std::string term;
    double value;
  };
  std::vector<Row> rows;
};

struct TrainPair {
  Tensor image;
  Caption caption;
};
using PairList = std::vector<TrainPair>;

PairList make_pairs(const Dataset& ds, const std::vector<std::size_t>& indices);
PairList all_pairs(const Dataset& ds);

// Data fed to one training run. `normal` is only consulted by the overfit
// objective, where it regularizes via the contrastive term.
struct TrainView {
  const PairList* primary = nullptr;
  const PairList* normal = nullptr;
};

// Bidirectional InfoNCE over an n x n similarity matrix:
//   -(1/2n) [ sum_i log softmax_row(i,i) + sum_j log softmax_col(j,j) ].
double info_nce_loss(const Tensor& sim, double tau);

// Mean squared deviation of suspicious-pair similarity from 1 plus the
// contrastive loss over the normal batch.
double overfit_loss(const DualEncoderModel& model, const PairList& susp_batch,
                    const PairList& normal_batch, double tau);

// Mean pairwise similarity over the batch; descending it drives the pairs
// apart.
double unlearn_loss(const DualEncoderModel& model, const PairList& batch);

// Runs epochs x batches of forward/backward/SGD with the chosen objective.
// Deterministic in cfg.seed; returns the updated model. Per-epoch term means
// are appended to `report` when non-null.
DualEncoderModel train(DualEncoderModel model, const TrainView& view,
                       LossKind kind, const TrainConfig& cfg,
                       LossReport* report = nullptr);

}  // namespace ubt
