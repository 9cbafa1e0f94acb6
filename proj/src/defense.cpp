// SPDX-License-Identifier: Apache-2.0
#include "ubt/defense.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ubt/errors.hpp"

namespace ubt {

std::vector<double> dataset_pair_similarities(
    const DualEncoderModel& model, const Dataset& ds,
    const std::vector<std::size_t>& indices) {
  std::vector<const Tensor*> images;
  std::vector<Caption> captions;
  images.reserve(indices.size());
  captions.reserve(indices.size());
  for (const std::size_t i : indices) {
    images.push_back(&ds.samples.at(i).image);
    captions.push_back(ds.samples.at(i).caption);
  }
  return model.pair_similarities(images, captions);
}

std::size_t suspicious_count_for(std::size_t dataset_size, double fraction) {
  const auto n = static_cast<std::size_t>(
      std::llround(static_cast<double>(dataset_size) * fraction));
  return std::max<std::size_t>(1, n);
}

std::size_t topk_for(std::size_t dataset_size) {
  const auto k = static_cast<std::size_t>(
      std::llround(std::sqrt(static_cast<double>(dataset_size) * 0.01)));
  return std::max<std::size_t>(1, k);
}

PartitionResult partition_suspicious(const DualEncoderModel& reference,
                                     const Dataset& ds, std::size_t s_susp) {
  if (s_susp < 1 || s_susp >= ds.size()) {
    throw InvalidCountError("partition_suspicious: need 1 <= s_susp < |D|");
  }
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);

  PartitionResult result;
  result.similarities = dataset_pair_similarities(reference, ds, all);

  // Lowest similarity first, ties by lower index.
  std::vector<std::size_t> order = all;
  std::sort(order.begin(), order.end(),
            [&result](std::size_t a, std::size_t b) {
              if (result.similarities[a] != result.similarities[b]) {
                return result.similarities[a] < result.similarities[b];
              }
              return a < b;
            });
  result.susp_indices.assign(order.begin(),
                             order.begin() + static_cast<std::ptrdiff_t>(s_susp));
  result.normal_indices.assign(
      order.begin() + static_cast<std::ptrdiff_t>(s_susp), order.end());
  std::sort(result.susp_indices.begin(), result.susp_indices.end());
  std::sort(result.normal_indices.begin(), result.normal_indices.end());
  return result;
}

DualEncoderModel overfit_stage(DualEncoderModel poisoned, const Dataset& ds,
                               const PartitionResult& partition,
                               const TrainConfig& cfg, LossReport* report) {
  const PairList susp = make_pairs(ds, partition.susp_indices);
  const PairList normal = make_pairs(ds, partition.normal_indices);
  TrainView view;
  view.primary = &susp;
  view.normal = &normal;
  return train(std::move(poisoned), view, LossKind::kOverfit, cfg, report);
}

TopkResult select_topk(const DualEncoderModel& overfit_model,
                       const Dataset& ds, const PartitionResult& partition,
                       std::size_t k) {
  if (k < 1 || k > partition.susp_indices.size()) {
    throw InvalidCountError("select_topk: need 1 <= k <= |D_susp|");
  }
  const std::vector<double> sims =
      dataset_pair_similarities(overfit_model, ds, partition.susp_indices);

  // Highest similarity first, ties by lower dataset index.
  std::vector<std::size_t> order(partition.susp_indices.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) {
              if (sims[a] != sims[b]) return sims[a] > sims[b];
              return partition.susp_indices[a] < partition.susp_indices[b];
            });

  std::vector<std::pair<std::size_t, double>> picked;
  picked.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    picked.emplace_back(partition.susp_indices[order[i]], sims[order[i]]);
  }
  std::sort(picked.begin(), picked.end());

  TopkResult result;
  for (const auto& [idx, sim] : picked) {
    result.topk_indices.push_back(idx);
    result.similarities.push_back(sim);
  }
  return result;
}

AttributionScores token_attribution(const DualEncoderModel& model,
                                    const Tensor& image,
                                    const Caption& caption) {
  std::vector<std::size_t> positions;
  for (std::size_t t = 0; t < caption.size(); ++t) {
    if (caption[t] != model.dims().pad_id) positions.push_back(t);
  }
  if (positions.empty()) {
    throw EmptyCaptionError("token_attribution: caption is all padding");
  }
  AttributionScores result;
  if (positions.size() == 1) {
    // No occluded variant exists; the lone token must be kept.
    result.scores.push_back(std::numeric_limits<double>::infinity());
    return result;
  }

  // Base caption plus one variant per occluded token, scored in one batch.
  std::vector<Caption> variants;
  variants.reserve(positions.size() + 1);
  variants.push_back(caption);
  for (const std::size_t drop : positions) {
    Caption v;
    v.reserve(caption.size());
    for (std::size_t t = 0; t < caption.size(); ++t) {
      if (t == drop) continue;
      if (caption[t] != model.dims().pad_id) v.push_back(caption[t]);
    }
    v.resize(model.dims().max_caption_len, model.dims().pad_id);
    variants.push_back(std::move(v));
  }
  std::vector<const Tensor*> images(variants.size(), &image);
  const std::vector<double> sims = model.pair_similarities(images, variants);
  const double base = sims[0];
  result.scores.reserve(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    result.scores.push_back(base - sims[i + 1]);
  }
  return result;
}

Caption build_mask(const Caption& caption, const AttributionScores& scores,
                   double threshold, std::size_t max_len) {
  std::vector<std::size_t> positions;
  for (std::size_t t = 0; t < caption.size(); ++t) {
    if (caption[t] != Vocab::kPadId) positions.push_back(t);
  }
  if (positions.size() != scores.scores.size()) {
    throw ShapeMismatchError(
        "build_mask: scores not aligned with caption tokens");
  }
  Caption out;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (scores.scores[i] > threshold) out.push_back(caption[positions[i]]);
  }
  if (out.empty()) {
    // Fallback: keep the single highest-scoring token.
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.scores.size(); ++i) {
      if (scores.scores[i] > scores.scores[best]) best = i;
    }
    out.push_back(caption[positions[best]]);
  }
  out.resize(max_len, Vocab::kPadId);
  return out;
}

UnlearnSet build_unlearn_set(const Dataset& ds, const TopkResult& topk,
                             const DualEncoderModel& poisoned_model,
                             double mask_threshold, bool include_masks) {
  if (topk.topk_indices.empty()) {
    throw InvalidCountError("build_unlearn_set: empty top-k set");
  }
  UnlearnSet set;
  for (const std::size_t i : topk.topk_indices) {
    for (const std::size_t j : topk.topk_indices) {
      set.pairs.emplace_back(i, j);
    }
  }
  if (include_masks) {
    for (const auto& [i, j] : set.pairs) {
      const Tensor& image = ds.samples.at(i).image;
      const Caption& caption = ds.samples.at(j).caption;
      const AttributionScores scores =
          token_attribution(poisoned_model, image, caption);
      set.masked_pairs.push_back(
          {i, build_mask(caption, scores, mask_threshold,
                         ds.max_caption_len)});
    }
  }
  return set;
}

PairList unlearn_pairs(const Dataset& ds, const UnlearnSet& set) {
  PairList out;
  out.reserve(set.pairs.size() + set.masked_pairs.size());
  for (const auto& [i, j] : set.pairs) {
    out.push_back({ds.samples.at(i).image, ds.samples.at(j).caption});
  }
  for (const auto& mp : set.masked_pairs) {
    out.push_back({ds.samples.at(mp.image_index).image, mp.caption});
  }
  return out;
}

UbtOutcome ubt_defend(const DualEncoderModel& poisoned,
                      const DualEncoderModel& reference, const Dataset& ds,
                      const DefenseConfig& cfg) {
  UbtOutcome outcome;
  outcome.partition = partition_suspicious(reference, ds, cfg.s_susp);
  outcome.overfit_model = overfit_stage(poisoned, ds, outcome.partition,
                                        cfg.overfit_cfg,
                                        &outcome.overfit_report);
  outcome.topk =
      select_topk(outcome.overfit_model, ds, outcome.partition, cfg.k);
  outcome.unlearn_set = build_unlearn_set(ds, outcome.topk, poisoned,
                                          cfg.mask_threshold,
                                          cfg.include_masks);

  const PairList view = unlearn_pairs(ds, outcome.unlearn_set);
  std::vector<const Tensor*> images;
  std::vector<Caption> captions;
  for (const TrainPair& p : view) {
    images.push_back(&p.image);
    captions.push_back(p.caption);
  }
  const std::vector<double> sims = poisoned.pair_similarities(images, captions);
  double mean = 0.0;
  for (const double s : sims) mean += s;
  mean /= static_cast<double>(sims.size());
  outcome.gate_mean_similarity = mean;

  if (mean < cfg.poison_gate) {
    outcome.gate_refused = true;
    outcome.model = poisoned;
    return outcome;
  }

  TrainView train_view;
  train_view.primary = &view;
  outcome.model = train(poisoned, train_view, LossKind::kUnlearn,
                        cfg.unlearn_cfg, &outcome.unlearn_report);
  return outcome;
}

DualEncoderModel abl_defend(const DualEncoderModel& poisoned,
                            const Dataset& ds,
                            const PartitionResult& partition, TrainConfig cfg,
                            LossReport* report) {
  cfg.direction = Direction::kAscend;
  const PairList susp = make_pairs(ds, partition.susp_indices);
  TrainView view;
  view.primary = &susp;
  return train(poisoned, view, LossKind::kContrastive, cfg, report);
}

DualEncoderModel clean_finetune_defend(const DualEncoderModel& poisoned,
                                       const Dataset& clean_heldout,
                                       const TrainConfig& cfg,
                                       LossReport* report) {
  const PairList pairs = all_pairs(clean_heldout);
  TrainView view;
  view.primary = &pairs;
  return train(poisoned, view, LossKind::kContrastive, cfg, report);
}

DualEncoderModel retrain_oracle(const DualEncoderModel& init,
                                const Dataset& ds, const TrainConfig& cfg,
                                LossReport* report) {
  std::vector<std::size_t> clean;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.samples[i].poisoned) clean.push_back(i);
  }
  const PairList pairs = make_pairs(ds, clean);
  TrainView view;
  view.primary = &pairs;
  return train(init, view, LossKind::kContrastive, cfg, report);
}

}  // namespace ubt
