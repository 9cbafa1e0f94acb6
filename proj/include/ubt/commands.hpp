// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ubt/config.hpp"
#include "ubt/defense.hpp"
#include "ubt/pac.hpp"

namespace ubt {

// Exit codes shared by the CLI and the command layer.
namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kMissingArtifact = 3;
inline constexpr int kNumericFailure = 4;
inline constexpr int kGateRefused = 5;
}  // namespace exit_code

// Artifact filenames inside a run directory.
namespace artifact {
inline constexpr const char* kCleanDataset = "clean.ds";
inline constexpr const char* kPoisonedDataset = "poisoned.ds";
inline constexpr const char* kPretrainCkpt = "pretrain.ckpt";
inline constexpr const char* kPoisonedCkpt = "poisoned.ckpt";
inline constexpr const char* kRetrainCkpt = "retrain.ckpt";
inline constexpr const char* kDefendedCkpt = "defended.ckpt";
inline constexpr const char* kOverfitCkpt = "overfit.ckpt";
inline constexpr const char* kPartitionCsv = "partition.csv";
inline constexpr const char* kTopkCsv = "topk.csv";
inline constexpr const char* kUnlearnSetCsv = "unlearn_set.csv";
inline constexpr const char* kGateFile = "gate.txt";
inline constexpr const char* kMetricsCsv = "metrics.csv";
inline constexpr const char* kManifest = "manifest.txt";
inline constexpr const char* kEffectiveConfig = "effective_config.ini";
}  // namespace artifact

// Generates the clean and poisoned dataset snapshots.
int cmd_generate(const ExperimentConfig& cfg);

// stage: "pretrain" (clean contrastive from fresh init), "poison"
// (contrastive fine-tune of the pretrained model on the poisoned snapshot)
// or "retrain" (contrastive fine-tune on the clean part only).
int cmd_train(const ExperimentConfig& cfg, const std::string& stage);

// Dispatches to the configured defense; returns kGateRefused when the UBT
// poison gate rejects the model.
int cmd_defend(const ExperimentConfig& cfg);

// Evaluates a checkpoint: CA/ASR (+ KL to the retrain checkpoint when
// present) appended to metrics.csv plus a similarity histogram file.
int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint);

// Prints N0 and, when n is given, the finite-sample bound at n.
int cmd_bound(const PacInputs& inputs, std::optional<std::size_t> n);

// Full generate -> train -> defend -> eval pipeline per value with derived
// seeds; aggregate CSV written to <out_dir>/sweep_<axis>.csv.
int cmd_sweep(const ExperimentConfig& cfg, const std::string& axis,
              const std::vector<std::uint64_t>& values);

// Shared helpers (also used by tests).
Dataset make_eval_dataset(const ExperimentConfig& cfg);
Dataset make_heldout_dataset(const ExperimentConfig& cfg);
TriggerSpec make_trigger_spec(const ExperimentConfig& cfg, const Dataset& ds);
Dataset filter_non_target(const Dataset& ds, std::int32_t target_class);
DefenseConfig make_defense_config(const ExperimentConfig& cfg,
                                  std::size_t dataset_size);

}  // namespace ubt
