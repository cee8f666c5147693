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

// The federated training loop: rounds of sample -> local update -> noise ->
// aggregate, validation after each round, early stopping, test evaluation at
// the best validation round, and checkpointing.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmr/checkpoint_io.hpp"
#include "fedmr/config.hpp"
#include "fedmr/dataset.hpp"
#include "fedmr/eval.hpp"
#include "fedmr/federation.hpp"
#include "fedmr/model.hpp"
#include "fedmr/parallel.hpp"
#include "fedmr/rng.hpp"

namespace fedmr {

struct MetricsRow {
  std::size_t round = 0;
  std::string split;  // "val" or "test"
  std::size_t k = 0;
  double hr = 0.0;
  double ndcg = 0.0;
  double loss = 0.0;
  double seconds = 0.0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline constexpr const char* kMetricsHeader = "v1,round,split,K,HR,NDCG,loss,seconds";

inline std::string format_metrics_row(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "v1,%zu,%s,%zu,%.17g,%.17g,%.17g,%.17g", r.round,
                r.split.c_str(), r.k, r.hr, r.ndcg, r.loss, r.seconds);
  return buf;
}

inline std::string metrics_csv(const std::vector<MetricsRow>& rows,
                               const std::string& hash) {
  std::string out = "# config_hash=" + hash + "\n" + kMetricsHeader + "\n";
  for (const auto& r : rows) out += format_metrics_row(r) + "\n";
  return out;
}

// Server parameters plus every client's private parameters.
struct ModelState {
  federation::ServerState server;
  std::vector<federation::ClientState> clients;
};

// F_j over the whole catalog. `local` supplies the mapping layers when they
// are not shared.
inline std::vector<Tensor> strategy_tables(const model::ModelSpec& spec,
                                           const ParamStore& shared,
                                           const ParamStore* local,
                                           const model::ItemTables& tables) {
  Tape t;
  auto p = fusion::Binder::constants(t, {local, &shared});
  std::vector<std::size_t> all(tables.n_items());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<Tensor> out;
  for (Var v : model::strategy_outputs(t, spec, p, tables, all))
    out.push_back(t.value(v));
  return out;
}

// Strategy weights w_u for one user.
inline Tensor user_mix_weights(const model::ModelSpec& spec, const ParamStore& local,
                               const std::vector<Tensor>& fs,
                               std::span<const std::size_t> pool) {
  Tape t;
  auto p = fusion::Binder::constants(t, {&local});
  std::vector<Var> vars;
  for (const auto& f : fs) vars.push_back(t.constant(f));
  return t.value(model::mix_weights(t, spec, p, vars, pool));
}

// F_bar for one user over the whole catalog.
inline Tensor user_fused(const model::ModelSpec& spec, const ParamStore& local,
                         const std::vector<Tensor>& fs,
                         std::span<const std::size_t> pool) {
  if (spec.mode != model::FusionMode::kMix) return fs.front();
  Tape t;
  auto p = fusion::Binder::constants(t, {&local});
  std::vector<Var> vars;
  for (const auto& f : fs) vars.push_back(t.constant(f));
  return t.value(model::fused(t, spec, p, vars, pool));
}

class Trainer {
 public:
  Trainer(ExperimentConfig cfg, const Dataset& ds)
      : cfg_(std::move(cfg)),
        ds_(ds),
        spec_(cfg_.model_spec(ds.visual.dim, ds.text.dim)),
        tables_(ds.tables()),
        sizes_(ds.train_sizes()),
        hash_(config_hash(cfg_)) {
    cfg_.validate();
    state_.server.shared =
        model::init_global(spec_, ds.n_items(), cfg_.seed, cfg_.init_id_std);
    state_.clients.resize(ds.n_users());
    for (std::size_t u = 0; u < ds.n_users(); ++u) {
      state_.clients[u].user = u;
      state_.clients[u].local = model::init_local(spec_, cfg_.seed, u);
    }
    best_state_ = state_;
  }

  const ExperimentConfig& config() const { return cfg_; }
  const model::ModelSpec& spec() const { return spec_; }
  const model::ItemTables& tables() const { return tables_; }
  const Dataset& dataset() const { return ds_; }
  const ModelState& state() const { return state_; }
  const ModelState& best_state() const { return best_state_; }
  const std::vector<MetricsRow>& history() const { return history_; }
  std::size_t round() const { return state_.server.round; }
  std::size_t best_round() const { return best_round_; }
  bool stopped_early() const { return stopped_; }
  const std::string& hash() const { return hash_; }

  // One communication round. Returns the mean local loss over clients.
  double run_round() {
    const std::size_t t = state_.server.round + 1;
    const std::uint64_t seed = cfg_.seed;
    const auto plan = federation::sample_clients(
        ds_.n_users(), cfg_.sampling_ratio, derive_seed(seed, "sample-clients", t),
        state_.server.previous_selection, cfg_.avoid_repeat, cfg_.alpha, sizes_);

    federation::NoiseConfig noise = cfg_.noise;
    noise.seed = derive_seed(seed, "noise", t);
    const std::uint64_t neg_seed = derive_seed(seed, "negatives", t);

    std::vector<federation::ClientReport> reports(plan.clients.size());
    std::vector<double> losses(plan.clients.size());
    parallel_for(plan.clients.size(), cfg_.worker_count(), [&](std::size_t k) {
      const std::size_t u = plan.clients[k];
      const auto negatives =
          data::sample_user_negatives(ds_.split, u, cfg_.neg_ratio, neg_seed);
      federation::ClientUpdateOptions opt;
      opt.local_epochs = cfg_.local_epochs;
      opt.lr = cfg_.lr;
      opt.batch_size = cfg_.batch_size;
      opt.seed = derive_seed(seed, "batch-order", t, u);
      opt.loss_weight = cfg_.alpha_in_local_loss ? plan.alpha[k] : 1.0;
      opt.round = t;
      auto result = federation::client_update(state_.clients[u], state_.server, spec_,
                                              tables_, ds_.split.train.items[u],
                                              negatives, opt);
      losses[k] = result.mean_loss;
      reports[k] = federation::apply_noise(std::move(result.report), noise);
    });

    state_.server = federation::aggregate(std::move(state_.server), reports, plan, cfg_.lr);
    state_.server.round = t;
    state_.server.previous_selection = plan.clients;
    for (const auto& e : state_.server.shared)
      for (double v : e.param.value.data())
        if (!std::isfinite(v))
          throw RuntimeError("round " + std::to_string(t) + ": parameter " + e.name +
                             " became non-finite");
    double sum = 0.0;
    for (double l : losses) sum += l;
    return sum / static_cast<double>(losses.size());
  }

  // Masked full-catalog evaluation of `state` on the validation or test
  // items. Validation masks train positives; test also masks the validation
  // item.
  std::vector<eval::MetricReport> evaluate(const ModelState& state,
                                           bool test) const {
    const std::size_t n = ds_.n_users();
    std::vector<std::size_t> ranks(n);
    std::vector<Tensor> shared_fs;
    if (spec_.share_feature_maps)
      shared_fs = strategy_tables(spec_, state.server.shared, nullptr, tables_);
    std::vector<std::size_t> all(ds_.n_items());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    parallel_for(n, cfg_.worker_count(), [&](std::size_t u) {
      const ParamStore& local = state.clients[u].local;
      const auto& pool = ds_.split.train.items[u];
      std::vector<Tensor> own_fs;
      if (!spec_.share_feature_maps)
        own_fs = strategy_tables(spec_, state.server.shared, &local, tables_);
      const auto& fs = spec_.share_feature_maps ? shared_fs : own_fs;
      const Tensor fused = user_fused(spec_, local, fs, pool);
      const auto scores = model::predict_scores(fused, local, spec_.backbone, all);
      std::vector<std::size_t> masked = pool;
      std::size_t target = ds_.split.val_item[u];
      if (test) {
        masked.insert(std::upper_bound(masked.begin(), masked.end(), target), target);
        target = ds_.split.test_item[u];
      }
      ranks[u] = eval::hit_rank(scores, masked, target);
      if (ranks[u] == 0)
        throw RuntimeError("user " + std::to_string(u) + ": held-out item is masked");
    });
    std::vector<eval::MetricReport> out;
    for (auto k : cfg_.k) out.push_back(eval::metrics_from_ranks(ranks, k));
    return out;
  }

  // Runs until cfg.rounds or early stop, then evaluates the best-validation
  // state on the test split. Safe to call after a resume.
  void run() {
    using Clock = std::chrono::steady_clock;
    while (!stopped_ && state_.server.round < cfg_.rounds) {
      const auto start = Clock::now();
      const double loss = run_round();
      const auto val = evaluate(state_, false);
      const double secs =
          cfg_.record_wall_time
              ? std::chrono::duration<double>(Clock::now() - start).count()
              : 0.0;
      const std::size_t t = state_.server.round;
      for (const auto& m : val)
        history_.push_back({t, "val", m.k, m.hr, m.ndcg, loss, secs});
      if (val.front().hr > best_hr_) {
        best_hr_ = val.front().hr;
        best_round_ = t;
        best_loss_ = loss;
        best_state_ = state_;
        since_best_ = 0;
      } else if (cfg_.patience > 0 && ++since_best_ >= cfg_.patience) {
        stopped_ = true;
      }
    }
    test_rows_.clear();
    for (const auto& m : evaluate(best_state_, true))
      test_rows_.push_back({best_round_, "test", m.k, m.hr, m.ndcg, best_loss_, 0.0});
  }

  const std::vector<MetricsRow>& test_rows() const { return test_rows_; }

  std::vector<MetricsRow> all_rows() const {
    auto rows = history_;
    rows.insert(rows.end(), test_rows_.begin(), test_rows_.end());
    return rows;
  }

  // Checkpoint: "FMRC", version, config, progress, current and best state.
  void save_checkpoint(const std::string& path) const {
    io::Writer w;
    w.raw("FMRC", 4);
    w.u64(kCheckpointVersion);
    // Keys that cannot change results are left out so checkpoints of
    // equivalent runs are byte-identical.
    auto stored = config_to_json(cfg_);
    stored.erase("output_dir");
    stored.erase("workers");
    w.str(stored.dump());
    w.str(hash_);
    w.u64(best_round_);
    w.f64(best_hr_);
    w.f64(best_loss_);
    w.u64(since_best_);
    w.u8(stopped_ ? 1 : 0);
    w.u64(history_.size());
    for (const auto& r : history_) {
      w.u64(r.round);
      w.str(r.split);
      w.u64(r.k);
      w.f64(r.hr);
      w.f64(r.ndcg);
      w.f64(r.loss);
      w.f64(r.seconds);
    }
    write_state(w, state_);
    write_state(w, best_state_);
    w.save(path);
  }

  static ExperimentConfig checkpoint_config(const std::string& path) {
    auto r = open_checkpoint(path);
    return config_from_json(nlohmann::json::parse(r.str()));
  }

  // Restores progress from `path`. The stored config must match this
  // trainer's config in everything except the round budget.
  void load_checkpoint(const std::string& path) {
    auto r = open_checkpoint(path);
    const auto stored = config_from_json(nlohmann::json::parse(r.str()));
    r.str();
    if (config_hash(stored, {"rounds"}) != config_hash(cfg_, {"rounds"}))
      throw ValidationError(path + ": checkpoint was written by a different config");
    best_round_ = r.u64();
    best_hr_ = r.f64();
    best_loss_ = r.f64();
    since_best_ = r.u64();
    stopped_ = r.u8() != 0;
    history_.resize(r.u64());
    for (auto& h : history_) {
      h.round = r.u64();
      h.split = r.str();
      h.k = r.u64();
      h.hr = r.f64();
      h.ndcg = r.f64();
      h.loss = r.f64();
      h.seconds = r.f64();
    }
    state_ = read_state(r, path);
    best_state_ = read_state(r, path);
    r.expect_end();
    test_rows_.clear();
  }

  static constexpr std::uint64_t kCheckpointVersion = 1;

 private:
  static io::Reader open_checkpoint(const std::string& path) {
    auto r = io::Reader::from_file(path);
    if (r.raw(4) != "FMRC") throw ValidationError(path + ": not a checkpoint");
    if (const auto v = r.u64(); v != kCheckpointVersion)
      throw ValidationError(path + ": unsupported checkpoint version " +
                            std::to_string(v));
    return r;
  }

  static void write_state(io::Writer& w, const ModelState& s) {
    w.u64(s.server.round);
    w.sizes(s.server.previous_selection);
    w.params(s.server.shared);
    w.u64(s.clients.size());
    for (const auto& c : s.clients) {
      w.u64(c.user);
      w.params(c.local);
    }
  }

  ModelState read_state(io::Reader& r, const std::string& path) const {
    ModelState s;
    s.server.round = r.u64();
    s.server.previous_selection = r.sizes();
    s.server.shared = r.params();
    s.clients.resize(r.u64());
    if (s.clients.size() != ds_.n_users())
      throw ValidationError(path + ": checkpoint has " +
                            std::to_string(s.clients.size()) + " clients, dataset has " +
                            std::to_string(ds_.n_users()));
    for (auto& c : s.clients) {
      c.user = r.u64();
      c.local = r.params();
    }
    check_layout(s.server.shared, state_.server.shared, path);
    return s;
  }

  static void check_layout(const ParamStore& got, const ParamStore& want,
                           const std::string& path) {
    bool ok = got.size() == want.size();
    for (std::size_t i = 0; ok && i < got.size(); ++i)
      ok = got.entries()[i].name == want.entries()[i].name &&
           got.entries()[i].param.value.shape() == want.entries()[i].param.value.shape();
    if (!ok) throw ValidationError(path + ": parameter layout does not match the model");
  }

  ExperimentConfig cfg_;
  const Dataset& ds_;
  model::ModelSpec spec_;
  model::ItemTables tables_;
  std::vector<std::size_t> sizes_;
  std::string hash_;

  ModelState state_;
  ModelState best_state_;
  std::vector<MetricsRow> history_;
  std::vector<MetricsRow> test_rows_;
  double best_hr_ = -1.0;
  double best_loss_ = 0.0;
  std::size_t best_round_ = 0;
  std::size_t since_best_ = 0;
  bool stopped_ = false;
};

}  // namespace fedmr
