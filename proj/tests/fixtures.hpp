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

#include <algorithm>
#include <cstdint>
#include <vector>

#include "fedmr/federation.hpp"
#include "fedmr/gradcheck.hpp"
#include "fedmr/model.hpp"
#include "fedmr/rng.hpp"

namespace fedmr::testing_util {

struct ToyUser {
  ParamStore local;
  std::vector<std::size_t> pool;   // train positives
  std::vector<std::size_t> batch;  // positives then negatives
  std::vector<double> labels;
};

// Random end-to-end instance: every parameter is drawn at a moderate scale so
// no activation sits at a ReLU kink or a saturated sigmoid.
struct ToyInstance {
  model::ModelSpec spec;
  model::ItemTables tables;
  ParamStore shared;
  std::vector<ToyUser> users;

  Var loss(Tape& t) {
    Var total;
    bool first = true;
    for (auto& u : users) {
      fusion::Binder p(t, {&u.local, &shared});
      Var l = model::batch_loss(t, spec, p, tables, u.pool, u.batch, u.labels);
      total = first ? l : t.add(total, l);
      first = false;
    }
    return total;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto& e : shared) out.push_back(&e.param);
    for (auto& u : users)
      for (auto& e : u.local) out.push_back(&e.param);
    return out;
  }
};

inline void randomize(ParamStore& store, Rng& rng, double sd) {
  for (auto& e : store)
    for (auto& v : e.param.value.storage()) v = rng.normal(0.0, sd);
}

inline model::ModelSpec toy_spec(model::FusionMode mode, model::Backbone backbone,
                                 std::size_t d, std::size_t raw_v,
                                 std::size_t raw_c) {
  model::ModelSpec spec;
  spec.mode = mode;
  spec.backbone = backbone;
  spec.fusion.d = d;
  spec.fusion.raw_dim_visual = raw_v;
  spec.fusion.raw_dim_text = raw_c;
  switch (mode) {
    case model::FusionMode::kMix:
      spec.fusion.strategies = {fusion::Strategy::kSum, fusion::Strategy::kMlp,
                                fusion::Strategy::kGate};
      break;
    case model::FusionMode::kSum: spec.fusion.strategies = {fusion::Strategy::kSum}; break;
    case model::FusionMode::kMlp: spec.fusion.strategies = {fusion::Strategy::kMlp}; break;
    case model::FusionMode::kGate: spec.fusion.strategies = {fusion::Strategy::kGate}; break;
  }
  return spec;
}

inline ToyInstance make_toy(std::uint64_t seed, model::FusionMode mode,
                            model::Backbone backbone, std::size_t d = 8,
                            std::size_t n_items = 20, std::size_t n_users = 3) {
  ToyInstance inst;
  inst.spec = toy_spec(mode, backbone, d, 6, 5);
  Rng rng(seed, "toy");
  inst.tables.visual = Tensor::zeros(n_items, 6);
  inst.tables.text = Tensor::zeros(n_items, 5);
  for (auto& v : inst.tables.visual.storage()) v = rng.normal();
  for (auto& v : inst.tables.text.storage()) v = rng.normal();
  inst.shared = model::init_global(inst.spec, n_items, seed, 0.1);
  randomize(inst.shared, rng, 0.4);
  for (std::size_t u = 0; u < n_users; ++u) {
    ToyUser user;
    user.local = model::init_local(inst.spec, seed, u);
    randomize(user.local, rng, 0.4);
    auto picks = rng.sample_without_replacement(n_items, 6);
    user.pool.assign(picks.begin(), picks.begin() + 4);
    std::sort(user.pool.begin(), user.pool.end());
    user.batch = user.pool;
    user.batch.push_back(picks[4]);
    user.batch.push_back(picks[5]);
    user.labels = {1, 1, 1, 1, 0, 0};
    inst.users.push_back(std::move(user));
  }
  return inst;
}

inline double toy_gradcheck(ToyInstance& inst) {
  auto params = inst.params();
  return finite_diff_check_extended(
             [&](Tape& t) { return inst.loss(t); }, params, 1e-6)
      .max_rel_error;
}

// A toy instance recast as server + clients with sampled negatives.
struct FedToy {
  ToyInstance inst;
  federation::ServerState server;
  std::vector<federation::ClientState> clients;
  std::vector<std::vector<std::vector<std::size_t>>> negatives;

  FedToy(std::uint64_t seed, model::FusionMode mode, model::Backbone backbone,
         std::size_t n_users = 3)
      : inst(make_toy(seed, mode, backbone, 8, 20, n_users)) {
    server.shared = inst.shared;
    Rng rng(seed, "fed-toy");
    for (std::size_t u = 0; u < inst.users.size(); ++u) {
      clients.push_back({u, inst.users[u].local});
      std::vector<std::size_t> others;
      for (std::size_t i = 0; i < 20; ++i)
        if (!std::binary_search(inst.users[u].pool.begin(), inst.users[u].pool.end(), i))
          others.push_back(i);
      std::vector<std::vector<std::size_t>> negs;
      for (std::size_t k = 0; k < inst.users[u].pool.size(); ++k) {
        std::vector<std::size_t> v;
        for (auto idx : rng.sample_without_replacement(others.size(), 2))
          v.push_back(others[idx]);
        negs.push_back(v);
      }
      negatives.push_back(negs);
    }
  }

  federation::ClientUpdateResult update(std::size_t u, const federation::ClientUpdateOptions& opt) {
    return federation::client_update(clients[u], server, inst.spec, inst.tables,
                         inst.users[u].pool, negatives[u], opt);
  }
};

}  // namespace fedmr::testing_util
