// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ubt/defense.hpp"
#include "ubt/errors.hpp"
#include "ubt/eval.hpp"
#include "ubt/rng.hpp"

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

Dataset tiny_dataset(std::uint64_t seed = 21, std::size_t per_class = 8,
                     std::int32_t classes = 4) {
  DataGenConfig cfg;
  cfg.class_count = classes;
  cfg.per_class = per_class;
  cfg.image_size = 4;
  cfg.vocab_size = 24;
  cfg.sigma = 0.08;
  cfg.seed = seed;
  cfg.max_caption_len = 6;
  return generate_dataset(cfg);
}

}  // namespace

TEST_CASE("clean accuracy validates inputs") {
  const Dataset ds = tiny_dataset();
  const ClassPrompts prompts = build_class_prompts(ds);
  const DualEncoderModel model = DualEncoderModel::init(tiny_dims(), 0.07, 3);
  Dataset empty = ds;
  empty.samples.clear();
  CHECK_THROWS_AS(clean_accuracy(model, empty, prompts), EmptyEvalSetError);
  Dataset dirty = ds;
  dirty.samples[0].poisoned = true;
  CHECK_THROWS_AS(clean_accuracy(model, dirty, prompts), InvalidConfigError);
}

TEST_CASE("single-class prompts force the prediction") {
  const Dataset ds = tiny_dataset();
  const DualEncoderModel model = DualEncoderModel::init(tiny_dims(), 0.07, 3);
  ClassPrompts one;
  one.per_class.push_back(build_class_prompts(ds).per_class[2]);
  // Every sample is predicted class 0 (the only class), so CA equals the
  // fraction whose true class id is 0.
  double expect = 0.0;
  for (const Sample& s : ds.samples) {
    if (s.class_id == 0) expect += 1.0;
  }
  expect /= static_cast<double>(ds.size());
  CHECK(clean_accuracy(model, ds, one) == doctest::Approx(expect));
}

TEST_CASE("random-weight models classify at chance level") {
  const Dataset ds = tiny_dataset(5, 64, 4);  // 256 samples, 4 classes
  const ClassPrompts prompts = build_class_prompts(ds);
  double mean_ca = 0.0;
  const int trials = 8;
  for (int t = 0; t < trials; ++t) {
    const DualEncoderModel model =
        DualEncoderModel::init(tiny_dims(), 0.07, 1000 + t);
    mean_ca += clean_accuracy(model, ds, prompts);
  }
  mean_ca /= trials;
  // Chance is 1/4; allow 3 sigma of the trial mean (sigma ~ sqrt(p(1-p)/n)).
  const double sigma = std::sqrt(0.25 * 0.75 / (256.0 * trials));
  CHECK(std::abs(mean_ca - 0.25) < 3.0 * sigma + 0.06);
}

TEST_CASE("attack success rate rejects target-class samples") {
  const Dataset ds = tiny_dataset();
  const ClassPrompts prompts = build_class_prompts(ds);
  const DualEncoderModel model = DualEncoderModel::init(tiny_dims(), 0.07, 3);
  TriggerSpec spec;
  spec.kind = TriggerKind::kPatch;
  spec.pattern = Tensor::full({2, 2}, 1.0);
  spec.target_class = 0;
  spec.templates = ds.templates;
  CHECK_THROWS_AS(attack_success_rate(model, ds, spec, prompts),
                  TargetClassInEvalSetError);

  Dataset filtered = ds;
  filtered.samples.clear();
  for (const Sample& s : ds.samples) {
    if (s.class_id != 0) filtered.samples.push_back(s);
  }
  const double asr = attack_success_rate(model, filtered, spec, prompts);
  CHECK(asr >= 0.0);
  CHECK(asr <= 1.0);
}

TEST_CASE("kl divergence hand cases") {
  const std::vector<double> p{1.0, 0.0};
  const std::vector<double> q{0.5, 0.5};
  CHECK(kl_divergence(p, q) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(kl_divergence(q, q) == 0.0);
  // Asymmetry on a constructed pair.
  const std::vector<double> a{0.9, 0.1};
  const std::vector<double> b{0.2, 0.8};
  CHECK(kl_divergence(a, b) != kl_divergence(b, a));
  // Nonnegativity on random distributions.
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> x(4), y(4);
    double sx = 0.0, sy = 0.0;
    for (int i = 0; i < 4; ++i) {
      x[i] = rng.uniform() + 1e-6;
      y[i] = rng.uniform() + 1e-6;
      sx += x[i];
      sy += y[i];
    }
    for (int i = 0; i < 4; ++i) {
      x[i] /= sx;
      y[i] /= sy;
    }
    CHECK(kl_divergence(x, y) >= 0.0);
  }
}

TEST_CASE("model_kl of a model against itself is exactly zero") {
  const Dataset ds = tiny_dataset();
  const ClassPrompts prompts = build_class_prompts(ds);
  const DualEncoderModel model = DualEncoderModel::init(tiny_dims(), 0.07, 3);
  CHECK(model_kl(model, model, ds, prompts) == 0.0);

  const DualEncoderModel other = DualEncoderModel::init(tiny_dims(), 0.07, 4);
  CHECK(model_kl(model, other, ds, prompts) > 0.0);
  // Asymmetric in general.
  CHECK(model_kl(model, other, ds, prompts) !=
        model_kl(other, model, ds, prompts));
}

TEST_CASE("class probabilities are a proper distribution") {
  const Dataset ds = tiny_dataset();
  const ClassPrompts prompts = build_class_prompts(ds);
  const DualEncoderModel model = DualEncoderModel::init(tiny_dims(), 0.07, 3);
  const std::vector<double> probs =
      class_probabilities(model, ds.samples[0].image, prompts);
  REQUIRE(probs.size() == 4);
  double total = 0.0;
  for (const double p : probs) {
    CHECK(p > 0.0);
    total += p;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("histogram densities match a naive bucketing loop") {
  const Dataset ds = tiny_dataset();
  const DualEncoderModel model = DualEncoderModel::init(tiny_dims(), 0.07, 3);
  std::vector<std::size_t> indices;
  std::vector<bool> mask;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    indices.push_back(i);
    mask.push_back(i % 3 == 0);  // synthetic poison mask
  }
  const std::size_t bins = 10;
  const HistogramExport hist =
      similarity_histogram(model, ds, indices, mask, bins);
  REQUIRE(hist.bin_edges.size() == bins + 1);

  const std::vector<double> sims = dataset_pair_similarities(model, ds, indices);
  std::vector<double> naive_bd(bins, 0.0), naive_clean(bins, 0.0);
  double n_bd = 0.0, n_clean = 0.0;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    std::size_t b = 0;
    while (b + 1 < bins && sims[i] >= hist.bin_edges[b + 1]) ++b;
    if (mask[i]) {
      naive_bd[b] += 1.0;
      n_bd += 1.0;
    } else {
      naive_clean[b] += 1.0;
      n_clean += 1.0;
    }
  }
  double sum_bd = 0.0, sum_clean = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    CHECK(hist.density_backdoor[b] ==
          doctest::Approx(naive_bd[b] / n_bd).epsilon(1e-12));
    CHECK(hist.density_clean[b] ==
          doctest::Approx(naive_clean[b] / n_clean).epsilon(1e-12));
    sum_bd += hist.density_backdoor[b];
    sum_clean += hist.density_clean[b];
  }
  CHECK(sum_bd == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sum_clean == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("histogram is invariant to sample order") {
  const Dataset ds = tiny_dataset();
  const DualEncoderModel model = DualEncoderModel::init(tiny_dims(), 0.07, 3);
  std::vector<std::size_t> indices;
  std::vector<bool> mask;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    indices.push_back(i);
    mask.push_back(ds.samples[i].class_id == 0);
  }
  const HistogramExport a = similarity_histogram(model, ds, indices, mask, 20);
  // Reverse the order.
  std::vector<std::size_t> rev(indices.rbegin(), indices.rend());
  std::vector<bool> rmask(mask.rbegin(), mask.rend());
  const HistogramExport b = similarity_histogram(model, ds, rev, rmask, 20);
  CHECK(a.density_backdoor == b.density_backdoor);
  CHECK(a.density_clean == b.density_clean);
}

TEST_CASE("histogram validates inputs") {
  const Dataset ds = tiny_dataset();
  const DualEncoderModel model = DualEncoderModel::init(tiny_dims(), 0.07, 3);
  CHECK_THROWS_AS(similarity_histogram(model, ds, {}, {}, 10),
                  EmptyIndexSetError);
  CHECK_THROWS_AS(similarity_histogram(model, ds, {0}, {true}, 1),
                  InvalidCountError);
  CHECK_THROWS_AS(similarity_histogram(model, ds, {0, 1}, {true}, 10),
                  ShapeMismatchError);
}
