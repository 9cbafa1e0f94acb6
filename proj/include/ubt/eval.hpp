// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ubt/dataset.hpp"
#include "ubt/model.hpp"

namespace ubt {

struct MetricsRecord {
  std::string stage;
  std::uint64_t seed = 0;
  std::int64_t timestamp = 0;
  double ca = 0.0;
  double asr = 0.0;
  std::optional<double> kl_to_retrain;
};

// Normalized similarity densities over uniform bins on [-1, 1], split into
// the poisoned and clean subsets. A subset with no members gets an all-zero
// density row.
struct HistogramExport {
  std::vector<double> bin_edges;  // bins + 1 edges
  std::vector<double> density_backdoor;
  std::vector<double> density_clean;
};

// Zero-shot predictions for every sample, scored against per-class prompt
// embeddings computed once.
std::vector<std::int32_t> classify_batch(const DualEncoderModel& model,
                                         const Dataset& eval_set,
                                         const ClassPrompts& prompts);

// Fraction of unpoisoned eval samples classified as their true class.
double clean_accuracy(const DualEncoderModel& model, const Dataset& eval_set,
                      const ClassPrompts& prompts);

// Fraction of triggered eval samples classified as the attack target. Every
// eval sample must come from a non-target class.
double attack_success_rate(const DualEncoderModel& model,
                           const Dataset& eval_set, const TriggerSpec& spec,
                           const ClassPrompts& prompts);

// KL(p || q) with probabilities floored at 1e-12 before the log.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Per-sample zero-shot class distribution: softmax of class similarity
// scores at the model's temperature.
std::vector<double> class_probabilities(const DualEncoderModel& model,
                                        const Tensor& image,
                                        const ClassPrompts& prompts);

// Mean over the eval set of KL(p_a || p_b) between the two models' zero-shot
// predictive distributions. Zero iff the distributions agree everywhere.
double model_kl(const DualEncoderModel& model_a,
                const DualEncoderModel& model_b, const Dataset& eval_set,
                const ClassPrompts& prompts);

HistogramExport similarity_histogram(const DualEncoderModel& model,
                                     const Dataset& ds,
                                     const std::vector<std::size_t>& indices,
                                     const std::vector<bool>& poison_mask,
                                     std::size_t bins);

}  // namespace ubt
