// SPDX-License-Identifier: Apache-2.0
#include "ubt/eval.hpp"

#include <algorithm>
#include <cmath>

#include "ubt/errors.hpp"
#include "ubt/kernels.hpp"

namespace ubt {

namespace {

constexpr double kProbFloor = 1e-12;

double clamp_sim(double s) { return s > 1.0 ? 1.0 : (s < -1.0 ? -1.0 : s); }

// All prompts stacked into one embedding matrix plus the class boundaries.
struct PromptMatrix {
  Tensor embeddings;  // total_prompts x embed
  std::vector<std::size_t> class_offsets;  // class c owns [off[c], off[c+1])
};

PromptMatrix encode_prompts(const DualEncoderModel& model,
                            const ClassPrompts& prompts) {
  if (prompts.per_class.empty()) {
    throw InvalidCountError("no prompt classes");
  }
  std::vector<Caption> flat;
  PromptMatrix pm;
  pm.class_offsets.push_back(0);
  for (const auto& plist : prompts.per_class) {
    if (plist.empty()) {
      throw InvalidCountError("class without prompts");
    }
    flat.insert(flat.end(), plist.begin(), plist.end());
    pm.class_offsets.push_back(flat.size());
  }
  pm.embeddings = model.encode_texts(model.make_token_batch(flat));
  return pm;
}

// Per-class mean similarity scores for a batch of images.
Tensor class_scores(const DualEncoderModel& model, const Tensor& image_embeds,
                    const PromptMatrix& pm) {
  const std::size_t n = image_embeds.rows();
  const std::size_t embed = model.dims().embed;
  const std::size_t total = pm.embeddings.rows();
  Tensor sims({n, total});
  kernels::matmul_nt(image_embeds.data(), pm.embeddings.data(), sims.data(),
                     n, embed, total);
  const std::size_t classes = pm.class_offsets.size() - 1;
  Tensor scores({n, classes});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < classes; ++c) {
      double acc = 0.0;
      for (std::size_t p = pm.class_offsets[c]; p < pm.class_offsets[c + 1];
           ++p) {
        acc += clamp_sim(sims[i * total + p]);
      }
      scores.at(i, c) = acc / static_cast<double>(pm.class_offsets[c + 1] -
                                                  pm.class_offsets[c]);
    }
  }
  return scores;
}

Tensor encode_eval_images(const DualEncoderModel& model,
                          const Dataset& eval_set, bool triggered,
                          const TriggerSpec* spec) {
  std::vector<Tensor> storage;
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(eval_set.size());
  if (triggered) {
    storage.reserve(eval_set.size());
    for (const Sample& s : eval_set.samples) {
      storage.push_back(inject_trigger(s.image, *spec));
      ptrs.push_back(&storage.back());
    }
  } else {
    for (const Sample& s : eval_set.samples) ptrs.push_back(&s.image);
  }
  return model.encode_images(model.flatten_images(ptrs));
}

std::vector<std::int32_t> argmax_classes(const Tensor& scores) {
  std::vector<std::int32_t> out(scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < scores.cols(); ++c) {
      if (scores.at(i, c) > scores.at(i, best)) best = c;
    }
    out[i] = static_cast<std::int32_t>(best);
  }
  return out;
}

}  // namespace

std::vector<std::int32_t> classify_batch(const DualEncoderModel& model,
                                         const Dataset& eval_set,
                                         const ClassPrompts& prompts) {
  if (eval_set.size() == 0) {
    throw EmptyEvalSetError("classify_batch: empty eval set");
  }
  const PromptMatrix pm = encode_prompts(model, prompts);
  const Tensor images = encode_eval_images(model, eval_set, false, nullptr);
  return argmax_classes(class_scores(model, images, pm));
}

double clean_accuracy(const DualEncoderModel& model, const Dataset& eval_set,
                      const ClassPrompts& prompts) {
  if (eval_set.size() == 0) {
    throw EmptyEvalSetError("clean_accuracy: empty eval set");
  }
  for (const Sample& s : eval_set.samples) {
    if (s.poisoned) {
      throw InvalidConfigError("clean_accuracy: eval set contains poisons");
    }
  }
  const std::vector<std::int32_t> predicted =
      classify_batch(model, eval_set, prompts);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == eval_set.samples[i].class_id) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

double attack_success_rate(const DualEncoderModel& model,
                           const Dataset& eval_set, const TriggerSpec& spec,
                           const ClassPrompts& prompts) {
  if (eval_set.size() == 0) {
    throw EmptyEvalSetError("attack_success_rate: empty eval set");
  }
  for (const Sample& s : eval_set.samples) {
    if (s.class_id == spec.target_class) {
      throw TargetClassInEvalSetError(
          "attack_success_rate: eval set contains target-class samples");
    }
  }
  const PromptMatrix pm = encode_prompts(model, prompts);
  const Tensor images = encode_eval_images(model, eval_set, true, &spec);
  const std::vector<std::int32_t> predicted =
      argmax_classes(class_scores(model, images, pm));
  std::size_t hits = 0;
  for (const std::int32_t p : predicted) {
    if (p == spec.target_class) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) {
    throw ShapeMismatchError("kl_divergence: distribution size mismatch");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = std::max(p[i], kProbFloor);
    const double qi = std::max(q[i], kProbFloor);
    kl += pi * std::log(pi / qi);
  }
  return kl;
}

std::vector<double> class_probabilities(const DualEncoderModel& model,
                                        const Tensor& image,
                                        const ClassPrompts& prompts) {
  const PromptMatrix pm = encode_prompts(model, prompts);
  const Tensor embed = model.encode_images(model.flatten_images({&image}));
  const Tensor scores = class_scores(model, embed, pm);
  const std::size_t classes = scores.cols();
  std::vector<double> probs(classes);
  double mx = scores[0];
  for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, scores[c]);
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    probs[c] = std::exp((scores[c] - mx) / model.tau());
    total += probs[c];
  }
  for (double& v : probs) v /= total;
  return probs;
}

double model_kl(const DualEncoderModel& model_a,
                const DualEncoderModel& model_b, const Dataset& eval_set,
                const ClassPrompts& prompts) {
  if (eval_set.size() == 0) {
    throw EmptyEvalSetError("model_kl: empty eval set");
  }
  const PromptMatrix pm_a = encode_prompts(model_a, prompts);
  const PromptMatrix pm_b = encode_prompts(model_b, prompts);
  const Tensor embeds_a = encode_eval_images(model_a, eval_set, false, nullptr);
  const Tensor embeds_b = encode_eval_images(model_b, eval_set, false, nullptr);
  const Tensor scores_a = class_scores(model_a, embeds_a, pm_a);
  const Tensor scores_b = class_scores(model_b, embeds_b, pm_b);
  const std::size_t classes = scores_a.cols();

  auto softmax_row = [classes](const Tensor& scores, std::size_t i,
                               double tau) {
    std::vector<double> probs(classes);
    double mx = scores.at(i, 0);
    for (std::size_t c = 1; c < classes; ++c) {
      mx = std::max(mx, scores.at(i, c));
    }
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[c] = std::exp((scores.at(i, c) - mx) / tau);
      total += probs[c];
    }
    for (double& v : probs) v /= total;
    return probs;
  };

  double total = 0.0;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    const std::vector<double> pa = softmax_row(scores_a, i, model_a.tau());
    const std::vector<double> pb = softmax_row(scores_b, i, model_b.tau());
    total += kl_divergence(pa, pb);
  }
  return total / static_cast<double>(eval_set.size());
}

HistogramExport similarity_histogram(const DualEncoderModel& model,
                                     const Dataset& ds,
                                     const std::vector<std::size_t>& indices,
                                     const std::vector<bool>& poison_mask,
                                     std::size_t bins) {
  if (indices.empty()) {
    throw EmptyIndexSetError("similarity_histogram: empty index set");
  }
  if (bins < 2) {
    throw InvalidCountError("similarity_histogram: need at least 2 bins");
  }
  if (poison_mask.size() != indices.size()) {
    throw ShapeMismatchError(
        "similarity_histogram: mask not aligned with indices");
  }

  std::vector<const Tensor*> images;
  std::vector<Caption> captions;
  for (const std::size_t i : indices) {
    images.push_back(&ds.samples.at(i).image);
    captions.push_back(ds.samples.at(i).caption);
  }
  const std::vector<double> sims = model.pair_similarities(images, captions);

  HistogramExport hist;
  hist.bin_edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) {
    hist.bin_edges[b] =
        -1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(bins);
  }
  std::vector<std::size_t> counts_bd(bins, 0), counts_clean(bins, 0);
  std::size_t total_bd = 0, total_clean = 0;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    auto b = static_cast<std::size_t>((sims[i] + 1.0) / 2.0 *
                                      static_cast<double>(bins));
    if (b >= bins) b = bins - 1;
    if (poison_mask[i]) {
      ++counts_bd[b];
      ++total_bd;
    } else {
      ++counts_clean[b];
      ++total_clean;
    }
  }
  hist.density_backdoor.resize(bins, 0.0);
  hist.density_clean.resize(bins, 0.0);
  for (std::size_t b = 0; b < bins; ++b) {
    if (total_bd > 0) {
      hist.density_backdoor[b] = static_cast<double>(counts_bd[b]) /
                                 static_cast<double>(total_bd);
    }
    if (total_clean > 0) {
      hist.density_clean[b] = static_cast<double>(counts_clean[b]) /
                              static_cast<double>(total_clean);
    }
  }
  return hist;
}

}  // namespace ubt
