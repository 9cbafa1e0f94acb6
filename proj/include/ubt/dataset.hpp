// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ubt/tensor.hpp"

namespace ubt {

using Caption = std::vector<std::int32_t>;

// Token id <-> token string map. Id 0 is always the pad token and id 1 the
// class-slot marker used inside templates (never in realized captions).
struct Vocab {
  std::vector<std::string> id_to_token;
  std::map<std::string, std::int32_t> token_to_id;

  static constexpr std::int32_t kPadId = 0;
  static constexpr std::int32_t kSlotId = 1;

  std::int32_t size() const {
    return static_cast<std::int32_t>(id_to_token.size());
  }
  std::int32_t require(const std::string& token) const;
  std::string decode(const Caption& caption) const;
};

// One image-caption pair. `poisoned` is ground truth kept for evaluation
// only; no training or defense stage may read it.
struct Sample {
  Tensor image;  // [H, W], values in [0, 1]
  Caption caption;
  std::int32_t class_id = 0;
  bool poisoned = false;
};

struct Dataset {
  std::vector<Sample> samples;
  std::int32_t class_count = 0;
  Vocab vocab;
  std::uint64_t seed = 0;
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  std::size_t max_caption_len = 0;
  // Shared caption templates (token sequences containing one slot marker)
  // and the class word token per class.
  std::vector<Caption> templates;
  std::vector<std::int32_t> class_tokens;

  std::size_t size() const { return samples.size(); }
  std::vector<std::size_t> poisoned_indices() const;

  bool operator==(const Dataset& other) const;
};

enum class TriggerKind { kPatch, kBlended, kSinusoidal };

std::string trigger_kind_name(TriggerKind kind);
TriggerKind trigger_kind_from_name(const std::string& name);

struct TriggerSpec {
  TriggerKind kind = TriggerKind::kPatch;
  Tensor pattern;  // patch: [ph, pw]; blended: [H, W]; unused for sinusoidal
  std::size_t patch_row = 0;
  std::size_t patch_col = 0;
  double alpha = 0.2;       // blended mix weight, in (0, 1]
  double frequency = 6.0;   // sinusoidal: cycles across the image width
  double amplitude = 0.1;   // sinusoidal: overlay amplitude, >= 0
  std::int32_t target_class = 0;
  std::vector<Caption> templates;  // target caption templates with one slot
  bool sample_templates_per_pair = true;

  // Throws if the spec cannot be applied to an H x W image.
  void validate(std::size_t image_h, std::size_t image_w) const;
};

struct DataGenConfig {
  std::int32_t class_count = 8;
  std::size_t per_class = 100;
  std::size_t image_size = 16;
  std::int32_t vocab_size = 64;
  double sigma = 0.05;
  std::uint64_t seed = 1;
  std::size_t max_caption_len = 8;
  // Stream for per-sample noise and template picks. 0 means "use `seed`".
  // Class prototypes always come from `seed`, so held-out sets generated
  // with a different noise seed share the class structure.
  std::uint64_t noise_seed = 0;
};

// Deterministic synthetic dataset: each class owns a prototype image drawn
// once from the seed, samples are clamp(prototype + sigma * noise), and
// captions are realized class templates.
Dataset generate_dataset(const DataGenConfig& config);

// Applies the trigger to a copy of the image; output stays in [0, 1] and,
// for the patch kind, pixels outside the patch are bit-identical to input.
Tensor inject_trigger(const Tensor& image, const TriggerSpec& spec);

// Poisons exactly `count` samples chosen uniformly (seeded) among samples
// whose class differs from the target: triggered image, target-template
// caption, poisoned flag set. Sample order is preserved.
Dataset poison_dataset(const Dataset& ds, const TriggerSpec& spec,
                       std::size_t count, std::uint64_t seed);

// Replaces the single slot marker with the class word token and re-pads to
// max_len. Throws MalformedTemplateError / UnknownClassError.
Caption realize_template(const Caption& tmpl, std::int32_t class_id,
                         const std::vector<std::int32_t>& class_tokens,
                         std::size_t max_len);

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace ubt
