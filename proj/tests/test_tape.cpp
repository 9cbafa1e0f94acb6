// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "fd_check.hpp"
#include "ubt/errors.hpp"
#include "ubt/rng.hpp"
#include "ubt/tape.hpp"

using namespace ubt;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape,
                     double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("sum of params has all-ones gradient") {
  ParamSet params;
  params.insert("a", Tensor::vector({1.0, -2.0, 3.0}));
  params.insert("b", Tensor::vector({0.5}));
  GradTape tape(params);
  const ValueId loss =
      tape.add(tape.sum_all(tape.param("a")), tape.sum_all(tape.param("b")));
  const ParamSet grads = tape.backward(loss);
  for (const auto& [name, g] : grads) {
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 1.0);
  }
}

TEST_CASE("half squared norm gradient equals the parameter") {
  ParamSet params;
  params.insert("p", Tensor::vector({1.0, 2.0}));
  GradTape tape(params);
  const ValueId loss =
      tape.scale(tape.sum_all(tape.square(tape.param("p"))), 0.5);
  const ParamSet grads = tape.backward(loss);
  CHECK(grads.at("p")[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(grads.at("p")[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("non-scalar loss is rejected") {
  ParamSet params;
  params.insert("p", Tensor::vector({1.0, 2.0}));
  GradTape tape(params);
  const ValueId node = tape.square(tape.param("p"));
  CHECK_THROWS_AS(tape.backward(node), NonScalarLossError);
}

TEST_CASE("unreachable parameters get zero gradients") {
  ParamSet params;
  params.insert("used", Tensor::vector({2.0}));
  params.insert("unused", Tensor::vector({5.0, 5.0}));
  GradTape tape(params);
  const ValueId loss = tape.sum_all(tape.square(tape.param("used")));
  const ParamSet grads = tape.backward(loss);
  CHECK(grads.at("used")[0] == doctest::Approx(4.0));
  CHECK(grads.at("unused")[0] == 0.0);
  CHECK(grads.at("unused")[1] == 0.0);
}

TEST_CASE("backward clears the tape") {
  ParamSet params;
  params.insert("p", Tensor::vector({1.0}));
  GradTape tape(params);
  const ValueId loss = tape.sum_all(tape.param("p"));
  (void)tape.backward(loss);
  CHECK(tape.node_count() == 0);
}

TEST_CASE("zero-norm rows are rejected") {
  ParamSet params;
  params.insert("p", Tensor({1, 2}, {0.0, 0.0}));
  GradTape tape(params);
  CHECK_THROWS_AS(tape.l2_normalize_rows(tape.param("p")), ZeroNormError);
}

TEST_CASE("all-pad caption is rejected") {
  ParamSet params;
  params.insert("table", Tensor({4, 3}, std::vector<double>(12, 0.5)));
  GradTape tape(params);
  TokenBatch batch;
  batch.n = 1;
  batch.len = 3;
  batch.pad_id = 0;
  batch.ids = {0, 0, 0};
  CHECK_THROWS_AS(tape.embed_mean_pool(tape.param("table"), batch),
                  EmptyCaptionError);
}

// Per-op finite-difference checks: each op embedded in a tiny graph whose
// loss weights every output element differently.
TEST_CASE("every differentiable op matches central finite differences") {
  Rng rng(17);
  int instances = 0;

  auto check = [&](const ParamSet& params,
                   const std::function<ValueId(GradTape&)>& build,
                   const std::function<double(const ParamSet&)>& eval) {
    GradTape tape(params);
    const ValueId loss = build(tape);
    const ParamSet analytic = tape.backward(loss);
    const ParamSet fd = testing::finite_difference_grads(params, eval);
    CHECK(testing::max_rel_error(analytic, fd) < 1e-4);
    ++instances;
  };

  for (int rep = 0; rep < 10; ++rep) {
    // add / sub / mul / square / scale / add_scalar through one chain.
    {
      ParamSet params;
      params.insert("a", random_tensor(rng, {3, 2}));
      params.insert("b", random_tensor(rng, {3, 2}));
      const Tensor w = random_tensor(rng, {3, 2});
      auto graph = [&w](GradTape& t) {
        const ValueId a = t.param("a");
        const ValueId b = t.param("b");
        const ValueId expr = t.add_scalar(
            t.scale(t.square(t.mul(t.add(a, b), t.sub(a, b))), 0.7), 0.3);
        return t.sum_all(t.mul(expr, t.constant(w)));
      };
      check(params, graph, [&](const ParamSet& p) {
        GradTape t(p);
        return t.value(graph(t))[0];
      });
    }
    // matmul + add_bias + tanh.
    {
      ParamSet params;
      params.insert("w", random_tensor(rng, {4, 3}));
      params.insert("x", random_tensor(rng, {2, 4}));
      params.insert("bias", random_tensor(rng, {3}));
      const Tensor w = random_tensor(rng, {2, 3});
      auto graph = [&w](GradTape& t) {
        const ValueId h =
            t.tanh(t.add_bias(t.matmul(t.param("x"), t.param("w")),
                              t.param("bias")));
        return t.sum_all(t.mul(h, t.constant(w)));
      };
      check(params, graph, [&](const ParamSet& p) {
        GradTape t(p);
        return t.value(graph(t))[0];
      });
    }
    // matmul_nt + rowwise_dot + mean_all.
    {
      ParamSet params;
      params.insert("u", random_tensor(rng, {3, 4}));
      params.insert("v", random_tensor(rng, {3, 4}));
      const Tensor w = random_tensor(rng, {3, 3});
      auto graph = [&w](GradTape& t) {
        const ValueId sim = t.matmul_nt(t.param("u"), t.param("v"));
        const ValueId weighted = t.mul(sim, t.constant(w));
        const ValueId diag = t.rowwise_dot(t.param("u"), t.param("v"));
        return t.add(t.sum_all(weighted), t.mean_all(diag));
      };
      check(params, graph, [&](const ParamSet& p) {
        GradTape t(p);
        return t.value(graph(t))[0];
      });
    }
    // l2_normalize_rows.
    {
      ParamSet params;
      params.insert("x", random_tensor(rng, {3, 5}, 1.0));
      // Keep rows well away from the zero-norm floor.
      for (std::size_t i = 0; i < 3; ++i) {
        params.mutable_at("x")[i * 5] += 2.0;
      }
      const Tensor w = random_tensor(rng, {3, 5});
      auto graph = [&w](GradTape& t) {
        return t.sum_all(
            t.mul(t.l2_normalize_rows(t.param("x")), t.constant(w)));
      };
      check(params, graph, [&](const ParamSet& p) {
        GradTape t(p);
        return t.value(graph(t))[0];
      });
    }
    // embed_mean_pool.
    {
      ParamSet params;
      params.insert("table", random_tensor(rng, {6, 3}));
      TokenBatch batch;
      batch.n = 4;
      batch.len = 4;
      batch.pad_id = 0;
      batch.ids.resize(batch.n * batch.len);
      for (auto& id : batch.ids) {
        id = static_cast<std::int32_t>(rng.uniform_int(6));
      }
      for (std::size_t i = 0; i < batch.n; ++i) batch.ids[i * batch.len] = 2;
      const Tensor w = random_tensor(rng, {4, 3});
      auto graph = [&](GradTape& t) {
        return t.sum_all(t.mul(t.embed_mean_pool(t.param("table"), batch),
                               t.constant(w)));
      };
      check(params, graph, [&](const ParamSet& p) {
        GradTape t(p);
        return t.value(graph(t))[0];
      });
    }
    // info_nce on a similarity-like matrix.
    {
      ParamSet params;
      params.insert("sim", random_tensor(rng, {4, 4}, 0.5));
      auto graph = [](GradTape& t) {
        return t.info_nce(t.param("sim"), 0.5);
      };
      check(params, graph, [&](const ParamSet& p) {
        GradTape t(p);
        return t.value(graph(t))[0];
      });
    }
  }
  CHECK(instances >= 60);
}

// The spec's standing example: a small two-layer encoder against finite
// differences.
TEST_CASE("two-layer encoder gradient matches finite differences") {
  Rng rng(23);
  for (int rep = 0; rep < 5; ++rep) {
    ParamSet params;
    params.insert("w1", random_tensor(rng, {6, 4}, 0.7));
    params.insert("b1", random_tensor(rng, {4}, 0.1));
    params.insert("w2", random_tensor(rng, {4, 3}, 0.7));
    params.insert("b2", random_tensor(rng, {3}, 0.1));
    const Tensor input = random_tensor(rng, {2, 6});
    const Tensor target = random_tensor(rng, {2, 3});

    auto graph = [&](GradTape& t) {
      const ValueId h = t.tanh(t.add_bias(
          t.matmul(t.constant(input), t.param("w1")), t.param("b1")));
      const ValueId out =
          t.add_bias(t.matmul(h, t.param("w2")), t.param("b2"));
      const ValueId err = t.sub(out, t.constant(target));
      return t.mean_all(t.square(err));
    };
    GradTape tape(params);
    const ParamSet analytic = tape.backward(graph(tape));
    const ParamSet fd = testing::finite_difference_grads(
        params, [&](const ParamSet& p) {
          GradTape t(p);
          return t.value(graph(t))[0];
        });
    CHECK(testing::max_rel_error(analytic, fd) < 1e-4);
  }
}

TEST_CASE("ops are deterministic") {
  Rng rng(31);
  ParamSet params;
  params.insert("a", random_tensor(rng, {8, 8}));
  params.insert("b", random_tensor(rng, {8, 8}));
  auto run = [&params] {
    GradTape tape(params);
    const ValueId loss = tape.info_nce(
        tape.matmul_nt(tape.param("a"), tape.param("b")), 0.07);
    return tape.backward(loss);
  };
  const ParamSet g1 = run();
  const ParamSet g2 = run();
  CHECK(g1 == g2);
}

TEST_CASE("sgd_step descends and ascends") {
  ParamSet params;
  params.insert("p", Tensor::vector({1.0}));
  ParamSet grads;
  grads.insert("p", Tensor::vector({2.0}));
  ParamSet down = params;
  sgd_step(down, grads, 0.5, Direction::kDescend);
  CHECK(down.at("p")[0] == 0.0);
  ParamSet up = params;
  sgd_step(up, grads, 0.5, Direction::kAscend);
  CHECK(up.at("p")[0] == 2.0);

  ParamSet zero;
  zero.insert("p", Tensor::vector({0.0}));
  ParamSet same = params;
  sgd_step(same, zero, 123.0, Direction::kDescend);
  CHECK(same.at("p")[0] == 1.0);

  ParamSet bad;
  bad.insert("p", Tensor::vector({std::nan("")}));
  CHECK_THROWS_AS(sgd_step(down, bad, 0.5, Direction::kDescend),
                  NonFiniteGradientError);
  CHECK_THROWS_AS(sgd_step(down, grads, -1.0, Direction::kDescend),
                  InvalidConfigError);
}
