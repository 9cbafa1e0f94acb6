// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fd_check.hpp"
#include "ubt/dataset.hpp"
#include "ubt/errors.hpp"
#include "ubt/objectives.hpp"
#include "ubt/rng.hpp"
#include "ubt/tape.hpp"

using namespace ubt;

namespace {

ModelDims tiny_dims() {
  ModelDims dims;
  dims.image_h = 4;
  dims.image_w = 4;
  dims.hidden = 6;
  dims.embed = 5;
  dims.vocab = 16;
  dims.token_dim = 4;
  dims.max_caption_len = 6;
  return dims;
}

Dataset tiny_dataset(std::uint64_t seed = 21, std::size_t per_class = 6) {
  DataGenConfig cfg;
  cfg.class_count = 2;
  cfg.per_class = per_class;
  cfg.image_size = 4;
  cfg.vocab_size = 16;
  cfg.sigma = 0.08;
  cfg.seed = seed;
  cfg.max_caption_len = 6;
  return generate_dataset(cfg);
}

// Hand-rolled bidirectional InfoNCE, straight from the definition.
double naive_info_nce(const Tensor& sim, double tau) {
  const std::size_t n = sim.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(sim.at(i, j) / tau);
    total += std::log(std::exp(sim.at(i, i) / tau) / denom);
  }
  for (std::size_t j = 0; j < n; ++j) {
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) denom += std::exp(sim.at(i, j) / tau);
    total += std::log(std::exp(sim.at(j, j) / tau) / denom);
  }
  return -total / (2.0 * static_cast<double>(n));
}

}  // namespace

TEST_CASE("single pair InfoNCE is exactly zero") {
  const Tensor sim({1, 1}, {0.37});
  CHECK(info_nce_loss(sim, 0.07) == 0.0);
}

TEST_CASE("two-pair identity similarity matches the hand evaluation") {
  const Tensor sim({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const double expected = std::log(1.0 + std::exp(-1.0));
  CHECK(info_nce_loss(sim, 1.0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("InfoNCE equals the naive double loop on random matrices") {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 1 + rng.uniform_int(8);
    Tensor sim({n, n});
    for (std::size_t i = 0; i < sim.size(); ++i) {
      sim[i] = 2.0 * rng.uniform() - 1.0;
    }
    CHECK(info_nce_loss(sim, 0.07) ==
          doctest::Approx(naive_info_nce(sim, 0.07)).epsilon(1e-9));
  }
}

TEST_CASE("relabeling pairs leaves InfoNCE unchanged") {
  Rng rng(6);
  const std::size_t n = 6;
  Tensor sim({n, n});
  for (std::size_t i = 0; i < sim.size(); ++i) {
    sim[i] = 2.0 * rng.uniform() - 1.0;
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  Tensor permuted({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      permuted.at(i, j) = sim.at(perm[i], perm[j]);
    }
  }
  CHECK(info_nce_loss(permuted, 0.07) ==
        doctest::Approx(info_nce_loss(sim, 0.07)).epsilon(1e-12));
}

TEST_CASE("overfit and unlearn losses match naive recomputation") {
  const Dataset ds = tiny_dataset();
  const DualEncoderModel model = DualEncoderModel::init(tiny_dims(), 0.07, 3);
  const PairList susp = make_pairs(ds, {0, 1, 6});
  const PairList normal = make_pairs(ds, {2, 3, 4, 5, 7});

  // Naive: per-pair cosine via single encodes, then the printed formulas.
  double mse = 0.0;
  for (const TrainPair& p : susp) {
    const double s = cosine_similarity(model.encode_image(p.image),
                                       model.encode_text(p.caption));
    mse += (s - 1.0) * (s - 1.0);
  }
  mse /= static_cast<double>(susp.size());
  Tensor sim({normal.size(), normal.size()});
  for (std::size_t i = 0; i < normal.size(); ++i) {
    for (std::size_t j = 0; j < normal.size(); ++j) {
      sim.at(i, j) =
          cosine_similarity(model.encode_image(normal[i].image),
                            model.encode_text(normal[j].caption));
    }
  }
  const double expected = mse + naive_info_nce(sim, model.tau());
  CHECK(overfit_loss(model, susp, normal, model.tau()) ==
        doctest::Approx(expected).epsilon(1e-9));

  double mean = 0.0;
  for (const TrainPair& p : susp) {
    mean += cosine_similarity(model.encode_image(p.image),
                              model.encode_text(p.caption));
  }
  mean /= static_cast<double>(susp.size());
  CHECK(unlearn_loss(model, susp) == doctest::Approx(mean).epsilon(1e-9));

  CHECK_THROWS_AS(unlearn_loss(model, PairList{}), InvalidCountError);
  CHECK_THROWS_AS(overfit_loss(model, susp, PairList{}, 0.07),
                  InvalidCountError);
}

namespace {

// Tape-built losses as functions of the parameters, for the FD oracle.
double tape_loss(const DualEncoderModel& model, const ParamSet& params,
                 LossKind kind, const PairList& primary,
                 const PairList& normal) {
  DualEncoderModel m = model;
  for (const auto& [name, value] : params) m.params().update(name, value);
  switch (kind) {
    case LossKind::kContrastive: {
      std::vector<const Tensor*> images;
      std::vector<Caption> captions;
      for (const TrainPair& p : primary) {
        images.push_back(&p.image);
        captions.push_back(p.caption);
      }
      return info_nce_loss(m.similarity_matrix(images, captions), m.tau());
    }
    case LossKind::kOverfit:
      return overfit_loss(m, primary, normal, m.tau());
    case LossKind::kUnlearn:
      return unlearn_loss(m, primary);
  }
  return 0.0;
}

ParamSet tape_grads(const DualEncoderModel& model, LossKind kind,
                    const PairList& primary, const PairList& normal) {
  GradTape tape(model.params());
  std::vector<const Tensor*> images;
  std::vector<Caption> captions;
  for (const TrainPair& p : primary) {
    images.push_back(&p.image);
    captions.push_back(p.caption);
  }
  const Tensor imgs = model.flatten_images(images);
  const TokenBatch toks = model.make_token_batch(captions);
  const auto enc = model.build_pair_graph(tape, imgs, toks);
  ValueId loss;
  if (kind == LossKind::kContrastive) {
    loss = tape.info_nce(tape.matmul_nt(enc.image_embed, enc.text_embed),
                         model.tau());
  } else if (kind == LossKind::kUnlearn) {
    loss = tape.mean_all(tape.rowwise_dot(enc.image_embed, enc.text_embed));
  } else {
    const ValueId diag = tape.rowwise_dot(enc.image_embed, enc.text_embed);
    const ValueId mse = tape.mean_all(tape.square(tape.add_scalar(diag, -1.0)));
    std::vector<const Tensor*> nimages;
    std::vector<Caption> ncaptions;
    for (const TrainPair& p : normal) {
      nimages.push_back(&p.image);
      ncaptions.push_back(p.caption);
    }
    const auto enc_n = model.build_pair_graph(
        tape, model.flatten_images(nimages), model.make_token_batch(ncaptions));
    loss = tape.add(mse, tape.info_nce(tape.matmul_nt(enc_n.image_embed,
                                                      enc_n.text_embed),
                                       model.tau()));
  }
  return tape.backward(loss);
}

}  // namespace

TEST_CASE("loss gradients match finite differences through the encoders") {
  Rng rng(77);
  const Dataset ds = tiny_dataset(33, 4);
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const DualEncoderModel model =
        DualEncoderModel::init(tiny_dims(), 0.2, seed);
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    rng.shuffle(all);
    const PairList primary =
        make_pairs(ds, {all[0], all[1], all[2]});
    const PairList normal = make_pairs(ds, {all[3], all[4], all[5]});

    for (const LossKind kind :
         {LossKind::kContrastive, LossKind::kOverfit, LossKind::kUnlearn}) {
      const ParamSet analytic = tape_grads(model, kind, primary, normal);
      const ParamSet fd = testing::finite_difference_grads(
          model.params(), [&](const ParamSet& p) {
            return tape_loss(model, p, kind, primary, normal);
          });
      CHECK(testing::max_rel_error(analytic, fd) < 1e-4);
      ++checked;
    }
  }
  CHECK(checked == 9);
}

TEST_CASE("zero epochs returns the model unchanged") {
  const Dataset ds = tiny_dataset();
  const DualEncoderModel model = DualEncoderModel::init(tiny_dims(), 0.07, 3);
  const PairList pairs = all_pairs(ds);
  TrainView view;
  view.primary = &pairs;
  TrainConfig cfg;
  cfg.epochs = 0;
  LossReport report;
  const DualEncoderModel out =
      train(model, view, LossKind::kContrastive, cfg, &report);
  CHECK(out == model);
  CHECK(report.rows.empty());
}

TEST_CASE("training is a pure function of model, data and config") {
  const Dataset ds = tiny_dataset();
  const DualEncoderModel model = DualEncoderModel::init(tiny_dims(), 0.07, 3);
  const PairList pairs = all_pairs(ds);
  TrainView view;
  view.primary = &pairs;
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 5;
  cfg.seed = 91;
  const DualEncoderModel a = train(model, view, LossKind::kContrastive, cfg);
  const DualEncoderModel b = train(model, view, LossKind::kContrastive, cfg);
  CHECK(a == b);
  CHECK_FALSE(a == model);
}

TEST_CASE("unlearning run drives the mean similarity down") {
  const Dataset ds = tiny_dataset();
  DualEncoderModel model = DualEncoderModel::init(tiny_dims(), 0.07, 3);
  const PairList batch = make_pairs(ds, {0, 1, 6, 7});
  TrainView view;
  view.primary = &batch;
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.learning_rate = 5e-3;
  cfg.seed = 4;
  LossReport report;
  (void)train(model, view, LossKind::kUnlearn, cfg, &report);
  REQUIRE(report.rows.size() >= 2);
  double first = 0.0, last = 0.0;
  for (const auto& row : report.rows) {
    if (row.epoch == 0) first = row.value;
    if (row.epoch == cfg.epochs - 1) last = row.value;
  }
  CHECK(last < first);
}

TEST_CASE("overfit training raises suspicious-pair similarity") {
  const Dataset ds = tiny_dataset();
  DualEncoderModel model = DualEncoderModel::init(tiny_dims(), 0.07, 3);
  const std::vector<std::size_t> susp_idx{0, 1, 6, 7};
  std::vector<std::size_t> normal_idx;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (std::find(susp_idx.begin(), susp_idx.end(), i) == susp_idx.end()) {
      normal_idx.push_back(i);
    }
  }
  const PairList susp = make_pairs(ds, susp_idx);
  const PairList normal = make_pairs(ds, normal_idx);
  const double before = unlearn_loss(model, susp);  // mean similarity
  TrainView view;
  view.primary = &susp;
  view.normal = &normal;
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 4;
  cfg.learning_rate = 5e-3;
  cfg.seed = 10;
  const DualEncoderModel out = train(model, view, LossKind::kOverfit, cfg);
  const double after = unlearn_loss(out, susp);
  CHECK(after > before);
}

TEST_CASE("train validates its inputs") {
  const Dataset ds = tiny_dataset();
  const DualEncoderModel model = DualEncoderModel::init(tiny_dims(), 0.07, 3);
  const PairList pairs = all_pairs(ds);
  TrainView empty;
  TrainConfig cfg;
  CHECK_THROWS_AS(train(model, empty, LossKind::kContrastive, cfg),
                  InvalidCountError);
  TrainView no_normal;
  no_normal.primary = &pairs;
  CHECK_THROWS_AS(train(model, no_normal, LossKind::kOverfit, cfg),
                  InvalidCountError);
  TrainConfig bad = cfg;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(train(model, no_normal, LossKind::kContrastive, bad),
                  InvalidConfigError);
}
