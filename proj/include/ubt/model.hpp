// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ubt/dataset.hpp"
#include "ubt/param_set.hpp"
#include "ubt/tape.hpp"
#include "ubt/tensor.hpp"

namespace ubt {

struct ModelDims {
  std::size_t image_h = 16;
  std::size_t image_w = 16;
  std::size_t hidden = 64;
  std::size_t embed = 32;
  std::size_t vocab = 64;
  std::size_t token_dim = 32;
  std::size_t max_caption_len = 8;
  std::int32_t pad_id = Vocab::kPadId;

  std::size_t image_pixels() const { return image_h * image_w; }
  bool operator==(const ModelDims&) const = default;
};

// Realized zero-shot prompts, one list per class.
struct ClassPrompts {
  std::vector<std::vector<Caption>> per_class;
};

ClassPrompts build_class_prompts(const Dataset& ds);

// Image- and text-encoder pair projecting into a shared unit-normalized
// embedding space. Image path: flatten -> affine -> tanh -> affine; text
// path: token embedding -> mean pool over non-pad tokens -> affine. Both
// outputs are row-normalized.
class DualEncoderModel {
 public:
  DualEncoderModel() = default;

  static DualEncoderModel init(const ModelDims& dims, double tau,
                               std::uint64_t seed);

  const ModelDims& dims() const { return dims_; }
  double tau() const { return tau_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // Inference path (no tape). Batch images are n x (h*w) row-major.
  Tensor encode_images(const Tensor& images) const;
  Tensor encode_texts(const TokenBatch& captions) const;
  Tensor encode_image(const Tensor& image) const;   // [embed], unit norm
  Tensor encode_text(const Caption& caption) const; // [embed], unit norm

  // Entry (i, j) = cosine similarity of image i and caption j, clamped to
  // [-1, 1].
  Tensor similarity_matrix(const std::vector<const Tensor*>& images,
                           const std::vector<Caption>& captions) const;

  // Per-pair similarity S(I_i, T_i), clamped.
  std::vector<double> pair_similarities(
      const std::vector<const Tensor*>& images,
      const std::vector<Caption>& captions) const;

  std::int32_t zero_shot_classify(const Tensor& image,
                                  const ClassPrompts& prompts) const;

  // Builds the training graph for a batch; returns the unit-normalized
  // embedding nodes.
  struct EncoderNodes {
    ValueId image_embed;
    ValueId text_embed;
  };
  EncoderNodes build_pair_graph(GradTape& tape, const Tensor& images,
                                const TokenBatch& captions) const;

  // Flattens [H, W] images into the n x (h*w) batch matrix the encoders eat.
  Tensor flatten_images(const std::vector<const Tensor*>& images) const;
  TokenBatch make_token_batch(const std::vector<Caption>& captions) const;

  void save(const std::filesystem::path& path) const;
  static DualEncoderModel load(const std::filesystem::path& path);

  bool operator==(const DualEncoderModel& other) const {
    return dims_ == other.dims_ && tau_ == other.tau_ &&
           params_ == other.params_;
  }

 private:
  ModelDims dims_;
  double tau_ = 0.07;
  ParamSet params_;
};

}  // namespace ubt
