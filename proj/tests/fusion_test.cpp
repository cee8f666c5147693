/*
 * Copyright 2026 The FedMR Simulator Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>

#include "fedmr/fusion.hpp"
#include "fedmr/gradcheck.hpp"
#include "fedmr/rng.hpp"
#include "fixtures.hpp"

namespace fedmr::fusion {
namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t = Tensor::zeros(r, c);
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

ParamStore gamma_store(Strategy s, std::size_t d, std::uint64_t seed,
                       bool elementwise = false) {
  FusionSpec spec;
  spec.d = d;
  spec.elementwise_gate = elementwise;
  ParamStore store;
  init_strategy(store, spec, s, seed);
  return store;
}

TEST(MapFeaturesTest, IdentityAndZeroMaps) {
  Rng rng(1);
  Tensor v = random_matrix(rng, 4, 3), c = random_matrix(rng, 4, 3);
  ParamStore maps;
  maps.add("map.v.w", Tensor::identity(3));
  maps.add("map.v.b", Tensor::zeros(1, 3));
  maps.add("map.c.w", Tensor::zeros(3, 3));
  maps.add("map.c.b", Tensor::zeros(1, 3));
  auto [mv, mc] = map_features(v, c, maps);
  EXPECT_EQ(mv, v);
  EXPECT_EQ(mc, Tensor::zeros(4, 3));
}

TEST(MapFeaturesTest, RawDimMismatchIsAnError) {
  Rng rng(1);
  ParamStore maps;
  FusionSpec spec;
  spec.d = 3;
  spec.raw_dim_visual = 5;
  spec.raw_dim_text = 3;
  init_feature_maps(maps, spec, 1);
  EXPECT_THROW(map_features(random_matrix(rng, 2, 4), random_matrix(rng, 2, 3), maps),
               ShapeError);
}

TEST(MapFeaturesTest, GradientThroughMapsPassesFiniteDifferences) {
  Rng rng(3);
  FusionSpec spec;
  spec.d = 4;
  spec.raw_dim_visual = 5;
  spec.raw_dim_text = 3;
  ParamStore maps;
  init_feature_maps(maps, spec, 3);
  testing_util::randomize(maps, rng, 0.5);
  Tensor v = random_matrix(rng, 6, 5), c = random_matrix(rng, 6, 3);
  Tensor target = random_matrix(rng, 6, 4);
  std::vector<Param*> params;
  for (auto& e : maps) params.push_back(&e.param);
  auto closure = [&](Tape& t) {
    Binder p(t, {&maps});
    Var mv = map_features(t, t.constant(v), p("map.v.w"), p("map.v.b"));
    Var mc = map_features(t, t.constant(c), p("map.c.w"), p("map.c.b"));
    Var z = t.mul(t.add(mv, mc), t.constant(target));
    return t.sum(t.sigmoid(z));
  };
  EXPECT_LT(finite_diff_check(closure, params), 1e-5);
}

TEST(FuseTest, SumWithZeroModalitiesIsId) {
  Rng rng(2);
  Tensor d = random_matrix(rng, 5, 4), z = Tensor::zeros(5, 4);
  EXPECT_EQ(fuse(Strategy::kSum, z, z, d, ParamStore{}), d);
}

TEST(FuseTest, ZeroGateHalvesTheSum) {
  Rng rng(2);
  Tensor v = random_matrix(rng, 5, 4), c = random_matrix(rng, 5, 4),
         d = random_matrix(rng, 5, 4);
  for (bool elementwise : {false, true}) {
    ParamStore g = gamma_store(Strategy::kGate, 4, 1, elementwise);
    g.at("gate.w").value.fill(0.0);
    Tensor f = fuse(Strategy::kGate, v, c, d, g, elementwise);
    for (std::size_t i = 0; i < f.size(); ++i)
      EXPECT_NEAR(f[i], 0.5 * (v[i] + c[i] + d[i]), 1e-15);
  }
}

TEST(FuseTest, ZeroMlpOutputsZero) {
  Rng rng(2);
  Tensor v = random_matrix(rng, 5, 4);
  ParamStore g = gamma_store(Strategy::kMlp, 4, 1);
  for (auto& e : g) e.param.value.fill(0.0);
  EXPECT_EQ(fuse(Strategy::kMlp, v, v, v, g), Tensor::zeros(5, 4));
}

TEST(FuseTest, ScalarGateMatchesNaiveFormula) {
  Rng rng(4);
  const std::size_t n = 3, d = 2;
  Tensor v = random_matrix(rng, n, d), c = random_matrix(rng, n, d),
         id = random_matrix(rng, n, d);
  ParamStore g = gamma_store(Strategy::kGate, d, 4);
  testing_util::randomize(g, rng, 0.5);
  Tensor f = fuse(Strategy::kGate, v, c, id, g);
  const Tensor& w = g.at("gate.w").value;
  const Tensor& b = g.at("gate.b").value;
  for (std::size_t i = 0; i < n; ++i) {
    double x[6];
    for (std::size_t k = 0; k < d; ++k) {
      x[k] = v.at(i, k);
      x[d + k] = c.at(i, k);
      x[2 * d + k] = id.at(i, k);
    }
    double gate[3];
    for (std::size_t j = 0; j < 3; ++j) {
      double z = b.at(0, j);
      for (std::size_t k = 0; k < 3 * d; ++k) z += x[k] * w.at(k, j);
      gate[j] = 1.0 / (1.0 + std::exp(-z));
    }
    for (std::size_t k = 0; k < d; ++k)
      EXPECT_NEAR(f.at(i, k),
                  gate[0] * v.at(i, k) + gate[1] * c.at(i, k) + gate[2] * id.at(i, k),
                  1e-14);
  }
}

TEST(FuseTest, ShapeMismatchIsAnError) {
  Tensor a = Tensor::zeros(3, 2), b = Tensor::zeros(4, 2);
  EXPECT_THROW(fuse(Strategy::kSum, a, a, b, ParamStore{}), ShapeError);
  EXPECT_THROW(parse_strategy("attention"), ValidationError);
}

TEST(RouteTest, ZeroRouterIsUniform) {
  Rng rng(5);
  std::vector<Tensor> fs = {random_matrix(rng, 6, 3), random_matrix(rng, 6, 3),
                            random_matrix(rng, 6, 3)};
  ParamStore r;
  r.add("router.w", Tensor::zeros(9, 3));
  r.add("router.b", Tensor::zeros(1, 3));
  const std::vector<std::size_t> pool = {0, 2, 5};
  Tensor w = route(fs, pool, r);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(w[j], 1.0 / 3.0, 1e-15);
}

TEST(RouteTest, LargeBiasSaturatesToOneHot) {
  Rng rng(5);
  std::vector<Tensor> fs = {random_matrix(rng, 6, 3), random_matrix(rng, 6, 3),
                            random_matrix(rng, 6, 3)};
  ParamStore r;
  r.add("router.w", Tensor::zeros(9, 3));
  r.add("router.b", Tensor::row_vector({50.0, 0.0, 0.0}));
  const std::vector<std::size_t> pool = {1};
  Tensor w = route(fs, pool, r);
  EXPECT_NEAR(w[0], 1.0, 1e-6);
  EXPECT_NEAR(w[1], 0.0, 1e-6);
  EXPECT_NEAR(w[2], 0.0, 1e-6);
}

TEST(RouteTest, PoolOrderDoesNotMatterAndEmptyPoolFails) {
  Rng rng(6);
  std::vector<Tensor> fs = {random_matrix(rng, 8, 4), random_matrix(rng, 8, 4)};
  FusionSpec spec;
  spec.d = 4;
  spec.strategies = {Strategy::kSum, Strategy::kMlp};
  ParamStore r;
  init_router(r, spec, 6, 0);
  testing_util::randomize(r, rng, 1.0);
  const std::vector<std::size_t> a = {1, 4, 7, 2}, b = {7, 2, 4, 1};
  Tensor wa = route(fs, a, r), wb = route(fs, b, r);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(wa[j], wb[j], 1e-15);
  EXPECT_THROW(route(fs, std::vector<std::size_t>{}, r), ValidationError);
}

TEST(RouteTest, WeightsStayOnTheSimplex) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor> fs = {random_matrix(rng, 5, 2), random_matrix(rng, 5, 2),
                              random_matrix(rng, 5, 2)};
    ParamStore r;
    r.add("router.w", random_matrix(rng, 6, 3));
    r.add("router.b", random_matrix(rng, 1, 3));
    for (auto& v : r.at("router.w").value.storage()) v *= 20.0;
    Tensor w = route(fs, std::vector<std::size_t>{0, 3}, r);
    double total = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_GE(w[j], 0.0);
      total += w[j];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(MixTest, OneHotSelectsExactly) {
  Rng rng(9);
  std::vector<Tensor> fs = {random_matrix(rng, 4, 3), random_matrix(rng, 4, 3),
                            random_matrix(rng, 4, 3)};
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(mix(fs, one_hot(3, j)), fs[j]);
}

TEST(MixTest, IdenticalStrategiesIgnoreWeights) {
  Rng rng(9);
  Tensor f = random_matrix(rng, 4, 3);
  Tensor w = Tensor::row_vector({0.2, 0.3, 0.5});
  Tensor out = mix({f, f, f}, w);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(out[i], f[i], 1e-15);
}

TEST(MixTest, MatchesNaiveElementLoop) {
  Rng rng(10);
  std::vector<Tensor> fs = {random_matrix(rng, 7, 5), random_matrix(rng, 7, 5),
                            random_matrix(rng, 7, 5)};
  Tensor w = Tensor::row_vector({0.1, 0.6, 0.3});
  Tensor out = mix(fs, w);
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      double expect = 0.0;
      for (std::size_t j = 0; j < 3; ++j) expect += w[j] * fs[j].at(r, c);
      EXPECT_NEAR(out.at(r, c), expect, 1e-15);
    }
  EXPECT_THROW(mix(fs, Tensor::row_vector({0.5, 0.5})), ValidationError);
}

TEST(MixTest, LinearAndRowEquivariant) {
  Rng rng(11);
  std::vector<Tensor> fs = {random_matrix(rng, 5, 2), random_matrix(rng, 5, 2)};
  Tensor w = Tensor::row_vector({0.4, 0.6});
  Tensor base = mix(fs, w);
  std::vector<Tensor> doubled = {kernel::scale(fs[0], 2.0), fs[1]};
  Tensor out = mix(doubled, w);
  for (std::size_t i = 0; i < base.size(); ++i)
    EXPECT_NEAR(out[i] - base[i], 0.4 * fs[0][i], 1e-14);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Tensor permuted = mix({kernel::gather_rows(fs[0], perm),
                         kernel::gather_rows(fs[1], perm)}, w);
  EXPECT_EQ(permuted, kernel::gather_rows(base, perm));
}

TEST(FusionGradientTest, GateNetworkOnRandomInput) {
  for (bool elementwise : {false, true}) {
    Rng rng(12);
    ParamStore g = gamma_store(Strategy::kGate, 3, 12, elementwise);
    testing_util::randomize(g, rng, 0.5);
    Tensor v = random_matrix(rng, 4, 3), c = random_matrix(rng, 4, 3),
           d = random_matrix(rng, 4, 3);
    std::vector<Param*> params;
    for (auto& e : g) params.push_back(&e.param);
    auto closure = [&](Tape& t) {
      Binder p(t, {&g});
      Var f = fuse(t, Strategy::kGate, {t.constant(v), t.constant(c), t.constant(d)},
                   p, elementwise);
      return t.sum(t.mul(f, f));
    };
    EXPECT_LT(finite_diff_check(closure, params), 1e-5);
  }
}

TEST(FusionGradientTest, RouterSoftmaxComposite) {
  Rng rng(13);
  std::vector<Tensor> fs = {random_matrix(rng, 6, 3), random_matrix(rng, 6, 3),
                            random_matrix(rng, 6, 3)};
  ParamStore r;
  r.add("router.w", random_matrix(rng, 9, 3));
  r.add("router.b", random_matrix(rng, 1, 3));
  std::vector<Param*> params = {&r.at("router.w"), &r.at("router.b")};
  auto closure = [&](Tape& t) {
    std::vector<Var> vars;
    for (const auto& f : fs) vars.push_back(t.constant(f));
    Binder p(t, {&r});
    const std::vector<std::size_t> pool = {0, 2, 3};
    Var w = route(t, vars, pool, p("router.w"), p("router.b"));
    return t.sum(t.mul(mix(t, vars, w), t.constant(fs[0])));
  };
  EXPECT_LT(finite_diff_check(closure, params), 1e-5);
}

TEST(FusionGradientTest, EndToEndRouteFuseMap) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto inst = testing_util::make_toy(seed, model::FusionMode::kMix,
                                       model::Backbone::kDot);
    EXPECT_LT(testing_util::toy_gradcheck(inst), 1e-5) << "seed " << seed;
  }
}

TEST(AblationTest, AllSourcesZeroedForcesZeroForSumAndGate) {
  for (auto mode : {model::FusionMode::kSum, model::FusionMode::kGate}) {
    auto inst = testing_util::make_toy(1, mode, model::Backbone::kDot);
    inst.spec.ablation = {true, true, true};
    Tape t;
    Binder p = Binder::constants(t, {&inst.users[0].local, &inst.shared});
    const std::vector<std::size_t> rows = {0, 1, 2, 3};
    auto fs = model::strategy_outputs(t, inst.spec, p, inst.tables, rows);
    EXPECT_EQ(t.value(fs[0]), Tensor::zeros(4, 8));
  }
}

TEST(InitTest, StrategyParamsIndependentOfStrategyList) {
  FusionSpec all;
  all.d = 4;
  all.raw_dim_visual = 3;
  all.raw_dim_text = 3;
  FusionSpec gate_only = all;
  gate_only.strategies = {Strategy::kGate};
  ParamStore a, b;
  init_strategies(a, all, 9);
  init_strategies(b, gate_only, 9);
  EXPECT_EQ(a.at("gate.w").value, b.at("gate.w").value);
  EXPECT_EQ(strategy_param_names(a, Strategy::kMlp).size(), 6u);
  EXPECT_TRUE(strategy_param_names(a, Strategy::kSum).empty());
}

}  // namespace
}  // namespace fedmr::fusion
