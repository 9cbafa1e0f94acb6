// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ubt/dataset.hpp"
#include "ubt/model.hpp"
#include "ubt/objectives.hpp"

namespace ubt {

// D_susp / D_normal split of a dataset by pair similarity under the clean
// reference model. Index lists are ascending; `similarities` holds the
// reference-model similarity for every dataset index.
struct PartitionResult {
  std::vector<std::size_t> susp_indices;
  std::vector<std::size_t> normal_indices;
  std::vector<double> similarities;
};

// The k suspicious pairs ranked most similar under the overfit model.
// `similarities` aligns with `topk_indices` (both ascending by index).
struct TopkResult {
  std::vector<std::size_t> topk_indices;
  std::vector<double> similarities;
};

// Leave-one-token-out contribution of each non-pad caption token to the
// pair similarity. A single-token caption gets one +infinity sentinel
// (the token must be kept; there is no occluded variant to compare with).
struct AttributionScores {
  std::vector<double> scores;
};

// Cartesian-product unlearn pairs plus their token-masked caption variants.
struct UnlearnSet {
  struct MaskedPair {
    std::size_t image_index;
    Caption caption;
  };
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (image, caption)
  std::vector<MaskedPair> masked_pairs;
};

struct DefenseConfig {
  std::size_t s_susp = 0;
  std::size_t k = 0;
  double mask_threshold = 0.1;
  double poison_gate = 0.8;
  bool include_masks = true;
  TrainConfig overfit_cfg;
  TrainConfig unlearn_cfg;
};

struct UbtOutcome {
  DualEncoderModel model;
  bool gate_refused = false;
  double gate_mean_similarity = 0.0;
  PartitionResult partition;
  TopkResult topk;
  UnlearnSet unlearn_set;
  DualEncoderModel overfit_model;
  LossReport overfit_report;
  LossReport unlearn_report;
};

// Similarity S(I_i, T_i) for the given dataset indices, clamped to [-1, 1].
std::vector<double> dataset_pair_similarities(
    const DualEncoderModel& model, const Dataset& ds,
    const std::vector<std::size_t>& indices);

// Default sizing rules: suspicious count = fraction of |D|, top-k =
// round(sqrt(|D| * 1%)); both floored at 1.
std::size_t suspicious_count_for(std::size_t dataset_size, double fraction);
std::size_t topk_for(std::size_t dataset_size);

// Splits the dataset into the s_susp lowest-similarity pairs (ties broken by
// lower index) and the rest, scored under the clean reference model.
PartitionResult partition_suspicious(const DualEncoderModel& reference,
                                     const Dataset& ds, std::size_t s_susp);

// Fine-tunes the poisoned model with the overfit objective: suspicious-pair
// similarity pushed toward 1, contrastive regularization on the normal set.
DualEncoderModel overfit_stage(DualEncoderModel poisoned, const Dataset& ds,
                               const PartitionResult& partition,
                               const TrainConfig& cfg,
                               LossReport* report = nullptr);

// The k highest-similarity suspicious pairs under the overfit model, ties
// broken by lower index.
TopkResult select_topk(const DualEncoderModel& overfit_model,
                       const Dataset& ds, const PartitionResult& partition,
                       std::size_t k);

AttributionScores token_attribution(const DualEncoderModel& model,
                                    const Tensor& image,
                                    const Caption& caption);

// Keeps exactly the tokens whose score exceeds `threshold`, preserving
// order and re-padding. If nothing survives the single highest-scoring
// token is kept.
Caption build_mask(const Caption& caption, const AttributionScores& scores,
                   double threshold, std::size_t max_len);

// All k^2 (image_i, caption_j) combinations over the top-k set plus one
// masked variant per combination, attributed under the poisoned model.
UnlearnSet build_unlearn_set(const Dataset& ds, const TopkResult& topk,
                             const DualEncoderModel& poisoned_model,
                             double mask_threshold, bool include_masks = true);

// Materializes the unlearn set as training pairs (plain pairs first, then
// masked variants).
PairList unlearn_pairs(const Dataset& ds, const UnlearnSet& set);

// The full pipeline: partition -> overfit -> top-k -> unlearn set -> poison
// gate -> unlearning. When the gate trips (mean unlearn-set similarity under
// the poisoned model below cfg.poison_gate) the input model is returned
// unchanged with gate_refused set.
UbtOutcome ubt_defend(const DualEncoderModel& poisoned,
                      const DualEncoderModel& reference, const Dataset& ds,
                      const DefenseConfig& cfg);

// Gradient-ascent contrastive training over all of D_susp.
DualEncoderModel abl_defend(const DualEncoderModel& poisoned,
                            const Dataset& ds,
                            const PartitionResult& partition, TrainConfig cfg,
                            LossReport* report = nullptr);

// Contrastive fine-tuning on a held-out clean dataset.
DualEncoderModel clean_finetune_defend(const DualEncoderModel& poisoned,
                                       const Dataset& clean_heldout,
                                       const TrainConfig& cfg,
                                       LossReport* report = nullptr);

// Reference cleanser: restarts from the given initialization and trains on
// the non-poisoned samples only.
DualEncoderModel retrain_oracle(const DualEncoderModel& init,
                                const Dataset& ds, const TrainConfig& cfg,
                                LossReport* report = nullptr);

}  // namespace ubt
