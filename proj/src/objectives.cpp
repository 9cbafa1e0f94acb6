// SPDX-License-Identifier: Apache-2.0
#include "ubt/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ubt/errors.hpp"
#include "ubt/kernels.hpp"
#include "ubt/rng.hpp"
#include "ubt/tape.hpp"

namespace ubt {

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::kContrastive: return "contrastive";
    case LossKind::kOverfit: return "overfit";
    case LossKind::kUnlearn: return "unlearn";
  }
  throw InvalidConfigError("unknown loss kind");
}

void TrainConfig::validate() const {
  if (batch_size < 1) {
    throw InvalidConfigError("train: batch_size must be >= 1");
  }
  if (!(learning_rate > 0.0)) {
    throw InvalidConfigError("train: learning_rate must be positive");
  }
}

PairList make_pairs(const Dataset& ds,
                    const std::vector<std::size_t>& indices) {
  PairList out;
  out.reserve(indices.size());
  for (const std::size_t i : indices) {
    out.push_back({ds.samples.at(i).image, ds.samples.at(i).caption});
  }
  return out;
}

PairList all_pairs(const Dataset& ds) {
  PairList out;
  out.reserve(ds.samples.size());
  for (const Sample& s : ds.samples) out.push_back({s.image, s.caption});
  return out;
}

double info_nce_loss(const Tensor& sim, double tau) {
  if (sim.rank() != 2 || sim.rows() != sim.cols() || sim.rows() < 1) {
    throw ShapeMismatchError("info_nce_loss: square matrix required");
  }
  if (!(tau > 0.0)) {
    throw InvalidConfigError("info_nce_loss: tau must be positive");
  }
  const std::size_t n = sim.rows();
  std::vector<double> row_terms(n), col_terms(n);
  const double loss = kernels::info_nce_forward(sim.data(), n, tau,
                                                row_terms.data(),
                                                col_terms.data());
  if (!std::isfinite(loss)) {
    throw NonFiniteError("info_nce_loss: non-finite value");
  }
  return loss;
}

namespace {

std::vector<const Tensor*> image_ptrs(const PairList& pairs) {
  std::vector<const Tensor*> out;
  out.reserve(pairs.size());
  for (const TrainPair& p : pairs) out.push_back(&p.image);
  return out;
}

std::vector<Caption> caption_list(const PairList& pairs) {
  std::vector<Caption> out;
  out.reserve(pairs.size());
  for (const TrainPair& p : pairs) out.push_back(p.caption);
  return out;
}

}  // namespace

double overfit_loss(const DualEncoderModel& model, const PairList& susp_batch,
                    const PairList& normal_batch, double tau) {
  if (susp_batch.empty() || normal_batch.empty()) {
    throw InvalidCountError("overfit_loss: both batches must be non-empty");
  }
  const std::vector<double> sims =
      model.pair_similarities(image_ptrs(susp_batch), caption_list(susp_batch));
  double mse = 0.0;
  for (const double s : sims) mse += (s - 1.0) * (s - 1.0);
  mse /= static_cast<double>(sims.size());
  const Tensor sim = model.similarity_matrix(image_ptrs(normal_batch),
                                             caption_list(normal_batch));
  return mse + info_nce_loss(sim, tau);
}

double unlearn_loss(const DualEncoderModel& model, const PairList& batch) {
  if (batch.empty()) {
    throw InvalidCountError("unlearn_loss: batch must be non-empty");
  }
  const std::vector<double> sims =
      model.pair_similarities(image_ptrs(batch), caption_list(batch));
  double mean = 0.0;
  for (const double s : sims) mean += s;
  return mean / static_cast<double>(sims.size());
}

namespace {

struct Batch {
  Tensor images;      // n x pixels
  TokenBatch tokens;  // n captions
  std::size_t n = 0;
};

Batch gather_batch(const DualEncoderModel& model, const PairList& pairs,
                   const std::vector<std::size_t>& order, std::size_t start,
                   std::size_t count, bool wrap) {
  std::vector<const Tensor*> images;
  std::vector<Caption> captions;
  images.reserve(count);
  captions.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t pos = wrap ? (start + i) % order.size() : start + i;
    const TrainPair& p = pairs[order[pos]];
    images.push_back(&p.image);
    captions.push_back(p.caption);
  }
  Batch b;
  b.images = model.flatten_images(images);
  b.tokens = model.make_token_batch(captions);
  b.n = count;
  return b;
}

// Per-step losses by term name, used for the epoch means.
using TermValues = std::map<std::string, double>;

TermValues run_step(DualEncoderModel& model, LossKind kind, const Batch& primary,
                    const Batch* normal, const TrainConfig& cfg) {
  GradTape tape(model.params());
  TermValues terms;
  ValueId loss;
  switch (kind) {
    case LossKind::kContrastive: {
      const auto enc = model.build_pair_graph(tape, primary.images,
                                              primary.tokens);
      const ValueId sim = tape.matmul_nt(enc.image_embed, enc.text_embed);
      loss = tape.info_nce(sim, model.tau());
      terms["info_nce"] = tape.value(loss)[0];
      break;
    }
    case LossKind::kOverfit: {
      const auto enc = model.build_pair_graph(tape, primary.images,
                                              primary.tokens);
      const ValueId diag = tape.rowwise_dot(enc.image_embed, enc.text_embed);
      const ValueId mse =
          tape.mean_all(tape.square(tape.add_scalar(diag, -1.0)));
      const auto enc_n =
          model.build_pair_graph(tape, normal->images, normal->tokens);
      const ValueId sim =
          tape.matmul_nt(enc_n.image_embed, enc_n.text_embed);
      const ValueId nce = tape.info_nce(sim, model.tau());
      loss = tape.add(tape.scale(mse, cfg.overfit_mse_weight), nce);
      terms["overfit_mse"] = tape.value(mse)[0];
      terms["info_nce"] = tape.value(nce)[0];
      break;
    }
    case LossKind::kUnlearn: {
      const auto enc = model.build_pair_graph(tape, primary.images,
                                              primary.tokens);
      const ValueId diag = tape.rowwise_dot(enc.image_embed, enc.text_embed);
      loss = tape.mean_all(diag);
      terms["mean_similarity"] = tape.value(loss)[0];
      break;
    }
    default:
      throw InvalidConfigError("train: unknown loss kind");
  }
  const ParamSet grads = tape.backward(loss);
  sgd_step(model.params(), grads, cfg.learning_rate, cfg.direction);
  return terms;
}

}  // namespace

DualEncoderModel train(DualEncoderModel model, const TrainView& view,
                       LossKind kind, const TrainConfig& cfg,
                       LossReport* report) {
  cfg.validate();
  if (view.primary == nullptr || view.primary->empty()) {
    throw InvalidCountError("train: primary view must be non-empty");
  }
  if (kind == LossKind::kOverfit &&
      (view.normal == nullptr || view.normal->empty())) {
    throw InvalidCountError("train: overfit needs a non-empty normal view");
  }
  if (cfg.epochs == 0) return model;

  const PairList& primary = *view.primary;
  static const PairList kNoNormal;
  const PairList& normal_list =
      kind == LossKind::kOverfit ? *view.normal : kNoNormal;
  Rng rng(cfg.seed);

  std::vector<std::size_t> order(primary.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<std::size_t> normal_order(normal_list.size());
  for (std::size_t i = 0; i < normal_order.size(); ++i) normal_order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      rng.shuffle(order);
      if (!normal_order.empty()) rng.shuffle(normal_order);
    }
    std::map<std::string, double> sums;
    std::size_t steps = 0;

    if (kind == LossKind::kOverfit) {
      const std::size_t p_batches =
          (primary.size() + cfg.batch_size - 1) / cfg.batch_size;
      const std::size_t n_batches =
          (normal_list.size() + cfg.batch_size - 1) / cfg.batch_size;
      const std::size_t total = std::max(p_batches, n_batches);
      const std::size_t p_count = std::min(cfg.batch_size, primary.size());
      const std::size_t n_count = std::min(cfg.batch_size, normal_list.size());
      for (std::size_t s = 0; s < total; ++s) {
        const Batch pb = gather_batch(model, primary, order,
                                      (s * p_count) % primary.size(), p_count,
                                      true);
        const Batch nb = gather_batch(model, normal_list, normal_order,
                                      (s * n_count) % normal_list.size(),
                                      n_count, true);
        TermValues terms;
        try {
          terms = run_step(model, kind, pb, &nb, cfg);
        } catch (const NonFiniteGradientError& e) {
          throw NonFiniteGradientError(
              std::string(e.what()) + " [stage=" + loss_kind_name(kind) +
              " epoch=" + std::to_string(epoch) + " batch=" +
              std::to_string(s) + "]");
        }
        for (const auto& [term, v] : terms) sums[term] += v;
        ++steps;
      }
    } else {
      for (std::size_t start = 0; start < primary.size();
           start += cfg.batch_size) {
        const std::size_t count =
            std::min(cfg.batch_size, primary.size() - start);
        const Batch pb = gather_batch(model, primary, order, start, count,
                                      false);
        TermValues terms;
        try {
          terms = run_step(model, kind, pb, nullptr, cfg);
        } catch (const NonFiniteGradientError& e) {
          throw NonFiniteGradientError(
              std::string(e.what()) + " [stage=" + loss_kind_name(kind) +
              " epoch=" + std::to_string(epoch) + " batch=" +
              std::to_string(start / cfg.batch_size) + "]");
        }
        for (const auto& [term, v] : terms) sums[term] += v;
        ++steps;
      }
    }

    if (report != nullptr) {
      for (const auto& [term, total] : sums) {
        report->rows.push_back(
            {epoch, term, total / static_cast<double>(steps)});
      }
    }
  }
  return model;
}

}  // namespace ubt
