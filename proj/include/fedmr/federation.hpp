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

// One FedMR communication round: client sampling, local training with
// gradient accumulation for shared fusion parameters, optional upload noise
// and weighted server aggregation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmr/error.hpp"
#include "fedmr/model.hpp"
#include "fedmr/rng.hpp"
#include "fedmr/tape.hpp"

namespace fedmr::federation {

inline constexpr std::string_view kIdEmbedding = "D";

enum class AlphaScheme { kUniform, kSizeProportional };

inline AlphaScheme parse_alpha_scheme(std::string_view s) {
  if (s == "uniform") return AlphaScheme::kUniform;
  if (s == "size") return AlphaScheme::kSizeProportional;
  throw ValidationError("unknown alpha scheme: " + std::string(s) +
                        " (expected uniform or size)");
}
constexpr std::string_view alpha_scheme_name(AlphaScheme a) {
  return a == AlphaScheme::kUniform ? "uniform" : "size";
}

struct NoiseConfig {
  bool enabled = false;
  double variance = 0.1;
  std::uint64_t seed = 0;
  bool on_gradients = true;  // accumulated shared-parameter gradients
  bool on_id_rows = true;    // D row deltas
};

// Global state held by the server.
struct ServerState {
  ParamStore shared;  // D, shared mapping layers, strategy params
  std::size_t round = 0;
  std::vector<std::size_t> previous_selection;
};

// Private per-user learnables. Never uploaded.
struct ClientState {
  std::size_t user = 0;
  ParamStore local;  // head.*, router.*, and map.* when maps are local
};

struct RoundPlan {
  std::vector<std::size_t> clients;  // ascending
  std::vector<double> alpha;         // aligned with clients, sums to 1
};

struct RowDelta {
  std::vector<std::size_t> rows;  // ascending
  Tensor values;                  // rows.size() x d
};

// Everything a client uploads after local training.
struct ClientReport {
  std::size_t client = 0;
  RowDelta id_delta;
  std::vector<std::pair<std::string, Tensor>> accumulated;
  std::size_t local_epochs = 0;
};

inline nlohmann::json to_json(const ClientReport& r) {
  nlohmann::json grads = nlohmann::json::object();
  for (const auto& [name, g] : r.accumulated)
    grads[name] = {{"shape", g.shape()},
                   {"values", std::vector<double>(g.data().begin(), g.data().end())}};
  return {{"client", r.client},
          {"local_epochs", r.local_epochs},
          {"id_delta",
           {{"rows", r.id_delta.rows},
            {"values", std::vector<double>(r.id_delta.values.data().begin(),
                                           r.id_delta.values.data().end())}}},
          {"accumulated_gradients", grads}};
}

// Samples ceil(ratio * n) clients without replacement. With avoid_repeat the
// previous round's clients are excluded. Alpha is uniform or proportional to
// `sizes` (interaction counts), renormalized over the selection.
inline RoundPlan sample_clients(std::size_t n, double ratio, std::uint64_t seed,
                                std::span<const std::size_t> previous,
                                bool avoid_repeat, AlphaScheme scheme,
                                std::span<const std::size_t> sizes = {}) {
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw ValidationError("sample_clients: ratio must be in (0, 1]");
  if (n == 0) throw ValidationError("sample_clients: no clients");
  const auto count = static_cast<std::size_t>(
      std::max(1.0, std::ceil(ratio * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> pool;
  pool.reserve(n);
  for (std::size_t u = 0; u < n; ++u) {
    if (avoid_repeat &&
        std::find(previous.begin(), previous.end(), u) != previous.end())
      continue;
    pool.push_back(u);
  }
  if (count > pool.size())
    throw ValidationError("sample_clients: cannot pick " + std::to_string(count) +
                          " clients disjoint from the previous round (" +
                          std::to_string(pool.size()) + " eligible)");
  RoundPlan plan;
  if (count == pool.size()) {
    plan.clients = pool;
  } else {
    Rng rng(seed);
    for (auto idx : rng.sample_without_replacement(pool.size(), count))
      plan.clients.push_back(pool[idx]);
    std::sort(plan.clients.begin(), plan.clients.end());
  }
  plan.alpha.resize(plan.clients.size());
  if (scheme == AlphaScheme::kUniform) {
    const double a = 1.0 / static_cast<double>(plan.clients.size());
    std::fill(plan.alpha.begin(), plan.alpha.end(), a);
  } else {
    if (sizes.size() != n)
      throw ValidationError("sample_clients: size-proportional alpha needs sizes");
    double total = 0.0;
    for (auto u : plan.clients) total += static_cast<double>(sizes[u]);
    if (!(total > 0.0))
      throw ValidationError("sample_clients: selected clients have no data");
    for (std::size_t k = 0; k < plan.clients.size(); ++k)
      plan.alpha[k] = static_cast<double>(sizes[plan.clients[k]]) / total;
  }
  return plan;
}

struct ClientUpdateOptions {
  std::size_t local_epochs = 10;
  double lr = 0.1;
  std::size_t batch_size = 2048;
  std::uint64_t seed = 0;    // batch order stream
  double loss_weight = 1.0;  // alpha_u when it also scales the local loss
  std::size_t round = 0;     // for diagnostics only
  bool record_steps = false;
};

struct ClientUpdateResult {
  ClientReport report;
  double mean_loss = 0.0;
  std::size_t steps = 0;
  // Filled when record_steps is set: per-step shared-parameter gradients and
  // the client's final local copy of the shared parameters.
  std::vector<std::vector<std::pair<std::string, Tensor>>> step_grads;
  ParamStore final_shared;
};

// Local training for one client on a copy of the server parameters.
//
// Each step runs map -> fuse -> route -> mix -> score -> loss over the rows
// the batch and the router pool need, backpropagates, and applies plain SGD
// to the head, router, local D copy and local fusion copies. Gradients of the
// shared non-D parameters are summed into the report.
inline ClientUpdateResult client_update(
    ClientState& client, const ServerState& server, const model::ModelSpec& spec,
    const model::ItemTables& tables, std::span<const std::size_t> train_pos,
    const std::vector<std::vector<std::size_t>>& negatives,
    const ClientUpdateOptions& opt) {
  if (train_pos.empty())
    throw ValidationError("client_update: user " + std::to_string(client.user) +
                          " has no train positives");
  if (negatives.size() != train_pos.size())
    throw ValidationError("client_update: negatives do not match positives");
  if (opt.batch_size == 0)
    throw ValidationError("client_update: batch_size must be positive");

  ParamStore shared = server.shared;
  Param& id_table = shared.at(kIdEmbedding);

  ClientUpdateResult result;
  ClientReport& report = result.report;
  report.client = client.user;
  report.local_epochs = opt.local_epochs;
  for (const auto& e : shared)
    if (e.name != kIdEmbedding)
      report.accumulated.emplace_back(e.name, Tensor(e.param.value.shape()));

  struct Pair {
    std::size_t item;
    double label;
  };
  std::vector<Pair> pairs;
  for (std::size_t k = 0; k < train_pos.size(); ++k) {
    pairs.push_back({train_pos[k], 1.0});
    for (auto neg : negatives[k]) pairs.push_back({neg, 0.0});
  }

  std::vector<bool> touched(id_table.value.rows(), false);
  double loss_sum = 0.0;

  // Zero learning rate disables local training entirely.
  const bool train = opt.lr != 0.0;
  for (std::size_t epoch = 0; train && epoch < opt.local_epochs; ++epoch) {
    Rng rng(opt.seed, "batch-order", epoch);
    rng.shuffle(pairs);
    for (std::size_t start = 0; start < pairs.size(); start += opt.batch_size) {
      const std::size_t stop = std::min(pairs.size(), start + opt.batch_size);

      std::vector<std::size_t> batch;
      std::vector<double> labels;
      for (std::size_t k = start; k < stop; ++k) {
        batch.push_back(pairs[k].item);
        labels.push_back(pairs[k].label);
      }

      shared.zero_grads();
      client.local.zero_grads();
      Tape t;
      fusion::Binder p(t, {&client.local, &shared});
      Var loss = model::batch_loss(t, spec, p, tables, train_pos, batch,
                                   std::move(labels));
      if (opt.loss_weight != 1.0) loss = t.scale(loss, opt.loss_weight);
      const double lv = t.value(loss)[0];
      if (!std::isfinite(lv))
        throw RuntimeError("client " + std::to_string(client.user) + " round " +
                           std::to_string(opt.round) + " step " +
                           std::to_string(result.steps) + ": non-finite loss");
      t.backward(loss);
      loss_sum += lv;
      ++result.steps;

      if (!spec.ablation.drop_id) {
        if (spec.uses_router())
          for (auto i : train_pos) touched[i] = true;
        for (auto i : batch) touched[i] = true;
      }

      if (opt.record_steps) result.step_grads.emplace_back();
      std::size_t k = 0;
      for (auto& e : shared) {
        if (e.name == kIdEmbedding) continue;
        Tensor& acc = report.accumulated[k++].second;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e.param.grad[i];
        if (opt.record_steps)
          result.step_grads.back().emplace_back(e.name, e.param.grad);
      }
      auto sgd = [&](Param& prm) {
        for (std::size_t i = 0; i < prm.value.size(); ++i)
          prm.value[i] -= opt.lr * prm.grad[i];
      };
      for (auto& e : shared) sgd(e.param);
      for (auto& e : client.local) sgd(e.param);
    }
  }

  const Tensor& before = server.shared.at(kIdEmbedding).value;
  const std::size_t d = before.cols();
  for (std::size_t r = 0; r < touched.size(); ++r)
    if (touched[r]) report.id_delta.rows.push_back(r);
  report.id_delta.values = Tensor::zeros(report.id_delta.rows.size(), d);
  for (std::size_t k = 0; k < report.id_delta.rows.size(); ++k) {
    const std::size_t r = report.id_delta.rows[k];
    for (std::size_t c = 0; c < d; ++c)
      report.id_delta.values.at(k, c) = id_table.value.at(r, c) - before.at(r, c);
  }
  result.mean_loss =
      result.steps ? loss_sum / static_cast<double>(result.steps) : 0.0;
  if (opt.record_steps) result.final_shared = std::move(shared);
  return result;
}

// Largest |sum(grads) - (gamma0 - gammaT) / lr| over all coordinates.
inline double accumulated_gradient_deviation(
    const Tensor& gamma0, const Tensor& gamma_t, double lr,
    std::span<const Tensor> step_grads) {
  if (!(lr > 0.0))
    throw ValidationError("accumulate_gamma_check: learning rate must be > 0");
  Tensor sum(gamma0.shape());
  for (const auto& g : step_grads) {
    if (g.shape() != gamma0.shape())
      throw ShapeError("accumulate_gamma_check: gradient shape mismatch");
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < sum.size(); ++i)
    worst = std::max(worst,
                     std::abs(sum[i] - (gamma0[i] - gamma_t[i]) / lr));
  return worst;
}

// True when the per-step gradients explain the parameter change under plain
// SGD within `tol` per coordinate. On failure, `diagnostic` names the max
// deviation.
inline bool accumulate_gamma_check(const Tensor& gamma0, const Tensor& gamma_t,
                                   double lr, std::span<const Tensor> step_grads,
                                   double tol = 1e-9,
                                   std::string* diagnostic = nullptr) {
  const double dev =
      accumulated_gradient_deviation(gamma0, gamma_t, lr, step_grads);
  if (dev <= tol) return true;
  if (diagnostic)
    *diagnostic = "accumulated gradient deviates from (gamma0 - gammaT)/lr by " +
                  std::to_string(dev) + " (tolerance " + std::to_string(tol) + ")";
  return false;
}

// Adds i.i.d. N(0, variance) to the uploaded gradients and D row deltas.
inline ClientReport apply_noise(ClientReport report, const NoiseConfig& cfg) {
  if (cfg.variance < 0.0)
    throw ValidationError("apply_noise: variance must be >= 0");
  if (!cfg.enabled || cfg.variance == 0.0) return report;
  Rng rng(cfg.seed, "upload-noise", report.client);
  const double sd = std::sqrt(cfg.variance);
  if (cfg.on_gradients)
    for (auto& [name, g] : report.accumulated)
      for (auto& v : g.storage()) v += rng.normal(0.0, sd);
  if (cfg.on_id_rows)
    for (auto& v : report.id_delta.values.storage()) v += rng.normal(0.0, sd);
  return report;
}

// D rows: each row touched by at least one report becomes the alpha-weighted
// mean of the participating copies (weights renormalized over the clients
// that touched it); untouched rows keep their value. Other shared params take
// one SGD step with the alpha-weighted accumulated gradients. Sums run in
// ascending client order.
inline ServerState aggregate(ServerState server,
                             std::span<const ClientReport> reports,
                             const RoundPlan& plan, double lr) {
  std::map<std::size_t, std::size_t> slot;
  for (std::size_t k = 0; k < plan.clients.size(); ++k)
    slot[plan.clients[k]] = k;
  std::vector<const ClientReport*> ordered;
  for (const auto& r : reports) {
    if (!slot.count(r.client))
      throw RuntimeError("aggregate: report from unplanned client " +
                         std::to_string(r.client));
    ordered.push_back(&r);
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const ClientReport* a, const ClientReport* b) {
              return a->client < b->client;
            });
  for (std::size_t k = 1; k < ordered.size(); ++k)
    if (ordered[k]->client == ordered[k - 1]->client)
      throw RuntimeError("aggregate: duplicate report from client " +
                         std::to_string(ordered[k]->client));

  Tensor& table = server.shared.at(kIdEmbedding).value;
  const std::size_t d = table.cols();
  Tensor num = Tensor::zeros(table.rows(), d);
  std::vector<double> den(table.rows(), 0.0);
  for (const ClientReport* r : ordered) {
    const double a = plan.alpha[slot[r->client]];
    for (std::size_t k = 0; k < r->id_delta.rows.size(); ++k) {
      const std::size_t row = r->id_delta.rows[k];
      den[row] += a;
      for (std::size_t c = 0; c < d; ++c)
        num.at(row, c) += a * r->id_delta.values.at(k, c);
    }
  }
  for (std::size_t row = 0; row < table.rows(); ++row) {
    if (den[row] == 0.0) continue;
    for (std::size_t c = 0; c < d; ++c) table.at(row, c) += num.at(row, c) / den[row];
  }

  for (auto& e : server.shared) {
    if (e.name == kIdEmbedding) continue;
    Tensor step(e.param.value.shape());
    for (const ClientReport* r : ordered) {
      const double a = plan.alpha[slot[r->client]];
      auto it = std::find_if(r->accumulated.begin(), r->accumulated.end(),
                             [&](const auto& p) { return p.first == e.name; });
      if (it == r->accumulated.end())
        throw RuntimeError("aggregate: client " + std::to_string(r->client) +
                           " did not report " + e.name);
      for (std::size_t i = 0; i < step.size(); ++i) step[i] += a * it->second[i];
    }
    for (std::size_t i = 0; i < step.size(); ++i)
      e.param.value[i] = e.param.value[i] - lr * step[i];
  }
  return server;
}

}  // namespace fedmr::federation
