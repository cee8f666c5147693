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

// Scoring backbones, the reconstruction loss, and the end-to-end item
// representation path (map -> fuse -> route -> mix) shared by training,
// evaluation and embedding export.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedmr/error.hpp"
#include "fedmr/fusion.hpp"
#include "fedmr/rng.hpp"
#include "fedmr/tape.hpp"

namespace fedmr::model {

enum class Backbone { kDot, kMlp };
enum class FusionMode { kMix, kSum, kMlp, kGate };

inline Backbone parse_backbone(std::string_view s) {
  if (s == "dot") return Backbone::kDot;
  if (s == "mlp") return Backbone::kMlp;
  throw ValidationError("unknown backbone: " + std::string(s));
}
constexpr std::string_view backbone_name(Backbone b) {
  return b == Backbone::kDot ? "dot" : "mlp";
}

inline FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "mix") return FusionMode::kMix;
  if (s == "sum") return FusionMode::kSum;
  if (s == "mlp") return FusionMode::kMlp;
  if (s == "gate") return FusionMode::kGate;
  throw ValidationError("unknown fusion mode: " + std::string(s));
}
constexpr std::string_view fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::kMix: return "mix";
    case FusionMode::kSum: return "sum";
    case FusionMode::kMlp: return "mlp";
    case FusionMode::kGate: return "gate";
  }
  return "?";
}

// Zeroes a source after mapping.
struct Ablation {
  bool drop_visual = false;
  bool drop_text = false;
  bool drop_id = false;
};

struct ModelSpec {
  // `fusion.strategies` is the active list: the configured strategies in
  // mix mode, the single chosen strategy otherwise.
  fusion::FusionSpec fusion;
  FusionMode mode = FusionMode::kMix;
  Backbone backbone = Backbone::kDot;
  Ablation ablation;
  // Replaces the router output by a one-hot on this strategy index.
  std::optional<std::size_t> frozen_route;
  // When false the mapping layers stay on each client and are never uploaded.
  bool share_feature_maps = true;

  bool uses_router() const {
    return mode == FusionMode::kMix && !frozen_route.has_value();
  }
  std::size_t d() const { return fusion.d; }
};

inline void init_head(ParamStore& store, Backbone b, std::size_t d,
                      std::uint64_t seed, std::uint64_t user) {
  Rng rng(seed, "init/head.user", user);
  if (b == Backbone::kDot) {
    Tensor u = Tensor::zeros(d, 1);
    for (auto& v : u.storage()) v = rng.normal(0.0, 0.1);
    store.add("head.user", std::move(u));
    return;
  }
  Tensor u = Tensor::zeros(1, d);
  for (auto& v : u.storage()) v = rng.normal(0.0, 0.1);
  store.add("head.user", std::move(u));
  store.add("head.w1", fusion::xavier(seed, "init/head.w1", 2 * d, d, user));
  store.add("head.b1", Tensor::zeros(1, d));
  store.add("head.w2", fusion::xavier(seed, "init/head.w2", d, d, user));
  store.add("head.b2", Tensor::zeros(1, d));
  store.add("head.w3", fusion::xavier(seed, "init/head.w3", d, 1, user));
  store.add("head.b3", Tensor::zeros(1, 1));
}

// Scores for each row of `items` ([n x d]) -> [n x 1].
inline Var scores(Tape& t, Backbone b, Var items, fusion::Binder& p) {
  if (b == Backbone::kDot) return t.matmul(items, p("head.user"));
  const std::size_t n = t.value(items).rows();
  Var x = t.concat_cols({t.repeat_rows(p("head.user"), n), items});
  Var h1 = t.relu(t.add_bias(t.matmul(x, p("head.w1")), p("head.b1")));
  Var h2 = t.relu(t.add_bias(t.matmul(h1, p("head.w2")), p("head.b2")));
  return t.add_bias(t.matmul(h2, p("head.w3")), p("head.b3"));
}

inline Var recon_loss(Tape& t, Var scores, std::vector<double> labels) {
  return t.bce_with_logits(scores, std::move(labels));
}

struct BatchLoss {
  double value = 0.0;
  std::size_t count = 0;
};

// Mean BCE-with-logits over (positive + sampled negative) pairs.
inline BatchLoss recon_loss(std::span<const double> scores,
                            std::span<const double> labels) {
  if (scores.empty()) throw ValidationError("recon_loss: empty batch");
  if (scores.size() != labels.size())
    throw ValidationError("recon_loss: scores and labels differ in length");
  for (double y : labels)
    if (y != 0.0 && y != 1.0)
      throw ValidationError("recon_loss: labels must be 0 or 1");
  Tensor z = Tensor::matrix(scores.size(), 1, {scores.begin(), scores.end()});
  return {kernel::bce_with_logits_mean(z, labels), scores.size()};
}

// Item scores for the given subset of rows of `fused`.
inline std::vector<double> predict_scores(const Tensor& fused,
                                          const ParamStore& head, Backbone b,
                                          std::span<const std::size_t> subset) {
  Tape t;
  fusion::Binder p(t, head);
  Var rows = t.gather_rows(t.constant(fused), {subset.begin(), subset.end()});
  const Tensor& s = t.value(scores(t, b, rows, p));
  return {s.data().begin(), s.data().end()};
}

// Raw modality features for every item, widened to 64-bit.
struct ItemTables {
  Tensor visual;
  Tensor text;
  std::size_t n_items() const { return visual.rows(); }
};

// The d-dim sources for item `rows`, with ablated sources replaced by zeros.
inline fusion::Sources sources(Tape& t, const ModelSpec& spec,
                               fusion::Binder& p, const ItemTables& tables,
                               std::span<const std::size_t> rows) {
  const std::size_t n = rows.size(), d = spec.d();
  const std::vector<std::size_t> idx(rows.begin(), rows.end());
  auto mapped = [&](const Tensor& raw, const char* w, const char* b) {
    return fusion::map_features(t, t.constant(kernel::gather_rows(raw, idx)),
                                p(w), p(b));
  };
  fusion::Sources src;
  src.visual = spec.ablation.drop_visual
                   ? t.constant(Tensor::zeros(n, d))
                   : mapped(tables.visual, "map.v.w", "map.v.b");
  src.text = spec.ablation.drop_text ? t.constant(Tensor::zeros(n, d))
                                     : mapped(tables.text, "map.c.w", "map.c.b");
  src.id = spec.ablation.drop_id ? t.constant(Tensor::zeros(n, d))
                                 : t.gather_rows(p("D"), idx);
  return src;
}

// F_j over item `rows` for each active strategy.
inline std::vector<Var> strategy_outputs(Tape& t, const ModelSpec& spec,
                                         fusion::Binder& p,
                                         const ItemTables& tables,
                                         std::span<const std::size_t> rows) {
  const fusion::Sources src = sources(t, spec, p, tables, rows);
  std::vector<Var> fs;
  for (auto s : spec.fusion.strategies)
    fs.push_back(fusion::fuse(t, s, src, p, spec.fusion.elementwise_gate));
  return fs;
}

// Strategy weights w_u ([1 x |G|]); pool_rows index rows of each F_j.
inline Var mix_weights(Tape& t, const ModelSpec& spec, fusion::Binder& p,
                       const std::vector<Var>& fs,
                       std::span<const std::size_t> pool_rows) {
  const std::size_t g = fs.size();
  if (spec.frozen_route) return t.constant(fusion::one_hot(g, *spec.frozen_route));
  if (spec.mode != FusionMode::kMix) return t.constant(fusion::one_hot(1, 0));
  return fusion::route(t, fs, pool_rows, p("router.w"), p("router.b"));
}

// F_bar for the rows the F_j were computed on.
inline Var fused(Tape& t, const ModelSpec& spec, fusion::Binder& p,
                 const std::vector<Var>& fs,
                 std::span<const std::size_t> pool_rows) {
  if (spec.mode != FusionMode::kMix) return fs.front();
  return fusion::mix(t, fs, mix_weights(t, spec, p, fs, pool_rows));
}

// Loss for one mini-batch of (item, label) pairs. F_j are computed only on
// the union of the router pool (when a router is in use) and the batch items.
inline Var batch_loss(Tape& t, const ModelSpec& spec, fusion::Binder& p,
                      const ItemTables& tables,
                      std::span<const std::size_t> pool_items,
                      std::span<const std::size_t> batch_items,
                      std::vector<double> labels) {
  if (batch_items.size() != labels.size())
    throw ValidationError("batch_loss: items and labels differ in length");
  if (!spec.uses_router()) pool_items = {};
  std::vector<std::size_t> rows(pool_items.begin(), pool_items.end());
  rows.insert(rows.end(), batch_items.begin(), batch_items.end());
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  auto position = [&](std::size_t item) {
    return static_cast<std::size_t>(
        std::lower_bound(rows.begin(), rows.end(), item) - rows.begin());
  };
  std::vector<std::size_t> pool, batch;
  for (auto i : pool_items) pool.push_back(position(i));
  for (auto i : batch_items) batch.push_back(position(i));
  auto fs = strategy_outputs(t, spec, p, tables, rows);
  Var fbar = fused(t, spec, p, fs, pool);
  Var s = scores(t, spec.backbone, t.gather_rows(fbar, batch), p);
  return recon_loss(t, s, std::move(labels));
}

// Parameters held by the server: D, the shared mapping layers and the
// strategy parameters.
inline ParamStore init_global(const ModelSpec& spec, std::size_t n_items,
                              std::uint64_t seed, double id_std) {
  ParamStore store;
  Rng rng(seed, "init/D");
  Tensor d = Tensor::zeros(n_items, spec.d());
  for (auto& v : d.storage()) v = rng.normal(0.0, id_std);
  store.add("D", std::move(d));
  if (spec.share_feature_maps) fusion::init_feature_maps(store, spec.fusion, seed);
  fusion::init_strategies(store, spec.fusion, seed);
  return store;
}

// Parameters private to one client.
inline ParamStore init_local(const ModelSpec& spec, std::uint64_t seed,
                             std::uint64_t user) {
  ParamStore store;
  init_head(store, spec.backbone, spec.d(), seed, user);
  if (spec.uses_router()) fusion::init_router(store, spec.fusion, seed, user);
  if (!spec.share_feature_maps) fusion::init_feature_maps(store, spec.fusion, seed);
  return store;
}

}  // namespace fedmr::model
