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

#pragma once

// Mixing feature fusion: per-modality mapping layers, the Sum / MLP / Gate
// strategies, the user-specific router and the router-weighted mixture.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedmr/error.hpp"
#include "fedmr/rng.hpp"
#include "fedmr/tape.hpp"

namespace fedmr::fusion {

enum class Strategy { kSum, kMlp, kGate };

constexpr std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kSum: return "sum";
    case Strategy::kMlp: return "mlp";
    case Strategy::kGate: return "gate";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "sum") return Strategy::kSum;
  if (s == "mlp") return Strategy::kMlp;
  if (s == "gate") return Strategy::kGate;
  throw ValidationError("unknown fusion strategy: " + std::string(s));
}

struct FusionSpec {
  std::size_t d = 64;
  std::size_t raw_dim_visual = 0;
  std::size_t raw_dim_text = 0;
  std::vector<Strategy> strategies = {Strategy::kSum, Strategy::kMlp,
                                      Strategy::kGate};
  // Gate emits one scalar per source by default; elementwise emits 3d gates.
  bool elementwise_gate = false;
};

// Resolves parameter names to tape leaves, searching trainable stores first,
// then frozen ones. Trainable stores bind as params (gradients flow into
// them); frozen stores bind as constants.
class Binder {
 public:
  Binder(Tape& tape, std::initializer_list<ParamStore*> trainable)
      : tape_(tape), trainable_(trainable) {}
  Binder(Tape& tape, const ParamStore& frozen) : tape_(tape), frozen_{&frozen} {}

  static Binder constants(Tape& tape,
                          std::initializer_list<const ParamStore*> frozen) {
    Binder b(tape, std::initializer_list<ParamStore*>{});
    b.frozen_.assign(frozen.begin(), frozen.end());
    return b;
  }

  Var operator()(std::string_view name) {
    for (ParamStore* s : trainable_)
      if (s && s->contains(name)) return tape_.param(s->at(name));
    for (const auto& [n, v] : frozen_vars_)
      if (n == name) return v;
    for (const ParamStore* s : frozen_) {
      if (s && s->contains(name)) {
        Var v = tape_.constant(s->at(name).value);
        frozen_vars_.emplace_back(std::string(name), v);
        return v;
      }
    }
    throw RuntimeError("no store holds parameter " + std::string(name));
  }

  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  std::vector<ParamStore*> trainable_;
  std::vector<const ParamStore*> frozen_;
  std::vector<std::pair<std::string, Var>> frozen_vars_;
};

// Xavier-uniform weights, zero biases. Each tensor draws from its own named
// stream so adding or removing a strategy leaves every other initial value
// unchanged.
inline Tensor xavier(std::uint64_t seed, std::string_view name, std::size_t in,
                     std::size_t out, std::uint64_t stream_index = 0) {
  Rng rng(seed, name, stream_index);
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor t = Tensor::zeros(in, out);
  for (auto& v : t.storage()) v = rng.uniform(-a, a);
  return t;
}

inline void init_feature_maps(ParamStore& store, const FusionSpec& spec,
                              std::uint64_t seed) {
  store.add("map.v.w", xavier(seed, "init/map.v.w", spec.raw_dim_visual, spec.d));
  store.add("map.v.b", Tensor::zeros(1, spec.d));
  store.add("map.c.w", xavier(seed, "init/map.c.w", spec.raw_dim_text, spec.d));
  store.add("map.c.b", Tensor::zeros(1, spec.d));
}

inline void init_strategy(ParamStore& store, const FusionSpec& spec,
                          Strategy s, std::uint64_t seed) {
  const std::size_t d = spec.d;
  switch (s) {
    case Strategy::kSum:
      break;
    case Strategy::kMlp:
      store.add("mlp.w1", xavier(seed, "init/mlp.w1", 3 * d, d));
      store.add("mlp.b1", Tensor::zeros(1, d));
      store.add("mlp.w2", xavier(seed, "init/mlp.w2", d, d));
      store.add("mlp.b2", Tensor::zeros(1, d));
      store.add("mlp.w3", xavier(seed, "init/mlp.w3", d, d));
      store.add("mlp.b3", Tensor::zeros(1, d));
      break;
    case Strategy::kGate: {
      const std::size_t width = spec.elementwise_gate ? 3 * d : 3;
      store.add("gate.w", xavier(seed, "init/gate.w", 3 * d, width));
      store.add("gate.b", Tensor::zeros(1, width));
      break;
    }
  }
}

inline void init_strategies(ParamStore& store, const FusionSpec& spec,
                            std::uint64_t seed) {
  for (Strategy s : spec.strategies) init_strategy(store, spec, s, seed);
}

// Router weights live on one client only.
inline void init_router(ParamStore& store, const FusionSpec& spec,
                        std::uint64_t seed, std::uint64_t user) {
  const std::size_t g = spec.strategies.size();
  store.add("router.w", xavier(seed, "init/router.w", g * spec.d, g, user));
  store.add("router.b", Tensor::zeros(1, g));
}

// Names of the per-strategy parameters (gamma_j) for strategy s.
inline std::vector<std::string> strategy_param_names(const ParamStore& store,
                                                     Strategy s) {
  const std::string prefix = std::string(strategy_name(s)) + ".";
  std::vector<std::string> out;
  for (const auto& e : store)
    if (e.name.rfind(prefix, 0) == 0) out.push_back(e.name);
  return out;
}

// Affine projection of raw modality rows into the shared d-dim space.
inline Var map_features(Tape& t, Var raw, Var w, Var b) {
  return t.add_bias(t.matmul(raw, w), b);
}

struct Sources {
  Var visual;
  Var text;
  Var id;
};

// F_j = g_j(V, C, D; gamma_j), row-wise over the given item rows.
inline Var fuse(Tape& t, Strategy s, const Sources& src, Binder& params,
                bool elementwise_gate = false) {
  switch (s) {
    case Strategy::kSum:
      return t.add(t.add(src.visual, src.text), src.id);
    case Strategy::kMlp: {
      Var x = t.concat_cols({src.visual, src.text, src.id});
      Var h1 = t.relu(t.add_bias(t.matmul(x, params("mlp.w1")), params("mlp.b1")));
      Var h2 = t.relu(t.add_bias(t.matmul(h1, params("mlp.w2")), params("mlp.b2")));
      return t.add_bias(t.matmul(h2, params("mlp.w3")), params("mlp.b3"));
    }
    case Strategy::kGate: {
      Var x = t.concat_cols({src.visual, src.text, src.id});
      Var g = t.sigmoid(t.add_bias(t.matmul(x, params("gate.w")), params("gate.b")));
      if (!elementwise_gate) {
        return t.add(t.add(t.scale_by_column(src.visual, g, 0),
                           t.scale_by_column(src.text, g, 1)),
                     t.scale_by_column(src.id, g, 2));
      }
      const std::size_t d = t.value(src.visual).cols();
      return t.add(t.add(t.mul(src.visual, t.slice_cols(g, 0, d)),
                         t.mul(src.text, t.slice_cols(g, d, 2 * d))),
                   t.mul(src.id, t.slice_cols(g, 2 * d, 3 * d)));
    }
  }
  throw ValidationError("unknown fusion strategy id");
}

// w_u = softmax(W concat_j mean_{i in pool} F_j[i] + b). `pool_rows` index
// rows of each F_j (the user's train positives).
inline Var route(Tape& t, const std::vector<Var>& fs,
                 std::span<const std::size_t> pool_rows, Var w, Var b) {
  if (pool_rows.empty())
    throw ValidationError("route: user has no train interactions");
  if (fs.empty()) throw ValidationError("route: no strategies");
  std::vector<Var> pools;
  pools.reserve(fs.size());
  const std::vector<std::size_t> rows(pool_rows.begin(), pool_rows.end());
  for (Var f : fs) pools.push_back(t.mean_rows(t.gather_rows(f, rows)));
  return t.softmax_rows(t.add_bias(t.matmul(t.concat_cols(pools), w), b));
}

// F_bar = sum_j w_j F_j; weights is [1 x |fs|].
inline Var mix(Tape& t, const std::vector<Var>& fs, Var weights) {
  const Tensor& w = t.value(weights);
  if (w.rows() != 1 || w.cols() != fs.size() || fs.empty())
    throw ValidationError("mix: " + std::to_string(fs.size()) +
                          " strategies but weights " + w.shape_str());
  Var acc = t.scale_by_column(fs[0], weights, 0);
  for (std::size_t j = 1; j < fs.size(); ++j)
    acc = t.add(acc, t.scale_by_column(fs[j], weights, j));
  return acc;
}

inline Tensor one_hot(std::size_t n, std::size_t k) {
  Tensor t = Tensor::zeros(1, n);
  t[k] = 1.0;
  return t;
}

// Value-level conveniences over a throwaway tape.

inline std::pair<Tensor, Tensor> map_features(const Tensor& visual_raw,
                                              const Tensor& text_raw,
                                              const ParamStore& maps) {
  Tape t;
  Binder p(t, maps);
  Var v = map_features(t, t.constant(visual_raw), p("map.v.w"), p("map.v.b"));
  Var c = map_features(t, t.constant(text_raw), p("map.c.w"), p("map.c.b"));
  return {t.value(v), t.value(c)};
}

inline Tensor fuse(Strategy s, const Tensor& v, const Tensor& c, const Tensor& d,
                   const ParamStore& gamma, bool elementwise_gate = false) {
  if (v.shape() != c.shape() || v.shape() != d.shape())
    throw ShapeError("fuse: V " + v.shape_str() + ", C " + c.shape_str() +
                     ", D " + d.shape_str() + " must match");
  Tape t;
  Binder p(t, gamma);
  return t.value(fuse(t, s, {t.constant(v), t.constant(c), t.constant(d)}, p,
                      elementwise_gate));
}

inline Tensor route(const std::vector<Tensor>& fs,
                    std::span<const std::size_t> pool_rows,
                    const ParamStore& router) {
  Tape t;
  std::vector<Var> vars;
  for (const auto& f : fs) vars.push_back(t.constant(f));
  Binder p(t, router);
  return t.value(route(t, vars, pool_rows, p("router.w"), p("router.b")));
}

inline Tensor mix(const std::vector<Tensor>& fs, const Tensor& weights) {
  Tape t;
  std::vector<Var> vars;
  for (const auto& f : fs) vars.push_back(t.constant(f));
  return t.value(mix(t, vars, t.constant(weights)));
}

}  // namespace fedmr::fusion
