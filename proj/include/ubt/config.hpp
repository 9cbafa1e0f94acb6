// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ubt/dataset.hpp"
#include "ubt/model.hpp"
#include "ubt/objectives.hpp"

namespace ubt {

enum class DefenseMethod { kUbt, kAbl, kCleanFinetune, kNone };

std::string defense_method_name(DefenseMethod method);
DefenseMethod defense_method_from_name(const std::string& name);

struct AttackSection {
  TriggerKind kind = TriggerKind::kPatch;
  std::int32_t target_class = 0;
  std::size_t poison_count = 24;
  std::size_t patch_size = 4;
  std::size_t patch_row = 0;
  std::size_t patch_col = 0;
  double alpha = 0.35;
  double frequency = 6.0;
  double amplitude = 0.25;
  bool sample_templates_per_pair = true;
};

struct DefenseSection {
  DefenseMethod method = DefenseMethod::kUbt;
  double s_susp_fraction = 0.15;
  std::string k_rule = "sqrt";  // "sqrt" or "fixed"
  std::size_t k_fixed = 0;      // used when k_rule == "fixed"
  double mask_threshold = 0.1;
  double poison_gate = 0.8;
  bool include_masks = true;
};

struct EvalSection {
  std::size_t per_class = 40;
  std::size_t bins = 50;
  std::size_t heldout_per_class = 25;
  double heldout_sigma = 0.15;
};

struct ModelSection {
  std::size_t hidden = 64;
  std::size_t embed = 32;
  std::size_t token_dim = 32;
  double tau = 0.07;
};

// Everything a run needs; every field has a default, a config file overrides
// them. All randomness flows from the seeds recorded here.
struct ExperimentConfig {
  DataGenConfig data;
  ModelSection model;
  AttackSection attack;
  TrainConfig pretrain;
  TrainConfig poison_train;
  TrainConfig overfit;
  TrainConfig unlearn;
  TrainConfig abl;
  TrainConfig cleanft;
  DefenseSection defense;
  EvalSection eval;
  std::string out_dir = "runs/default";

  static ExperimentConfig defaults();
  static ExperimentConfig load(const std::filesystem::path& path);

  // Canonical key=value rendering of the effective config; the run hash is
  // computed over this, so formatting of the source file does not matter.
  std::string serialize() const;
  std::string hash() const;

  void validate() const;

  // Offsets every seed by `offset`, used to derive sweep-point configs.
  void shift_seeds(std::uint64_t offset);

  ModelDims model_dims() const;
};

}  // namespace ubt
