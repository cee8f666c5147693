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

// Command implementations behind the `fedmr` CLI.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmr/config.hpp"
#include "fedmr/dataset.hpp"
#include "fedmr/trainer.hpp"

namespace fedmr {

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + path);
  out << text;
  if (!out) throw RuntimeError("short write to " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- prepare ---------------------------------------------------------------

inline std::string format_stats_table(const std::string& name, const Dataset& ds) {
  char buf[256];
  std::string out = "dataset\tusers\titems\tinteractions\tsparsity\n";
  std::snprintf(buf, sizeof buf, "%s\t%zu\t%zu\t%zu\t%.2f%%\n", name.c_str(),
                ds.n_users(), ds.n_items(), ds.interaction_count(),
                100.0 * ds.sparsity());
  return out + buf;
}

// Builds the dataset from raw or synthetic sources and writes it to
// cfg.output_dir.
inline Dataset cmd_prepare(const ExperimentConfig& cfg, std::ostream& log) {
  if (!cfg.data.prepared.empty())
    throw ValidationError("prepare: data must be raw or synth, not prepared");
  Dataset ds = load_dataset(cfg);
  write_prepared(cfg.output_dir, ds, config_hash(cfg));
  const std::string name =
      cfg.data.raw ? std::filesystem::path(cfg.data.raw->interactions)
                         .parent_path()
                         .filename()
                         .string()
                   : std::string("synth");
  log << format_stats_table(name.empty() ? "raw" : name, ds);
  return ds;
}

// ---- run -------------------------------------------------------------------

inline nlohmann::json parameter_counts(const Trainer& tr) {
  std::size_t d_rows = 0, maps = 0, strategies = 0;
  for (const auto& e : tr.state().server.shared) {
    const std::size_t n = e.param.value.size();
    if (e.name == federation::kIdEmbedding)
      d_rows += n;
    else if (e.name.rfind("map.", 0) == 0)
      maps += n;
    else
      strategies += n;
  }
  std::size_t head = 0, router = 0, local_maps = 0;
  if (!tr.state().clients.empty()) {
    for (const auto& e : tr.state().clients.front().local) {
      const std::size_t n = e.param.value.size();
      if (e.name.rfind("head.", 0) == 0)
        head += n;
      else if (e.name.rfind("router.", 0) == 0)
        router += n;
      else
        local_maps += n;
    }
  }
  return {{"shared", {{"id_embedding", d_rows},
                      {"feature_maps", maps},
                      {"strategies", strategies},
                      {"total", d_rows + maps + strategies}}},
          {"per_client", {{"head", head},
                          {"router", router},
                          {"feature_maps", local_maps},
                          {"total", head + router + local_maps}}},
          {"uploaded_gradients_per_client", maps + strategies}};
}

inline nlohmann::json run_summary(const Trainer& tr) {
  nlohmann::json test = nlohmann::json::object();
  for (const auto& r : tr.test_rows())
    test[std::to_string(r.k)] = {{"HR", r.hr}, {"NDCG", r.ndcg}};
  nlohmann::json best_val = nlohmann::json::object();
  for (const auto& r : tr.history())
    if (r.round == tr.best_round())
      best_val[std::to_string(r.k)] = {{"HR", r.hr}, {"NDCG", r.ndcg}};
  return {{"config_hash", tr.hash()},
          {"rounds_run", tr.round()},
          {"best_round", tr.best_round()},
          {"stopped_early", tr.stopped_early()},
          {"test", test},
          {"best_validation", best_val},
          {"dataset", dataset_stats(tr.dataset())},
          {"parameter_counts", parameter_counts(tr)}};
}

struct RunResult {
  std::string hash;
  std::vector<MetricsRow> rows;
  nlohmann::json summary;
};

// Trains, evaluates and writes metrics.csv, summary.json, checkpoint.bin and
// config.json into cfg.output_dir. With `resume`, training continues from
// that checkpoint.
inline RunResult cmd_run(const ExperimentConfig& cfg, const Dataset& ds,
                         const std::optional<std::string>& resume = std::nullopt) {
  Trainer tr(cfg, ds);
  if (resume) tr.load_checkpoint(*resume);
  try {
    tr.run();
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception& e) {
    throw RuntimeError("run failed after round " + std::to_string(tr.round()) + ": " +
                       e.what());
  }
  const std::string& dir = cfg.output_dir;
  std::filesystem::create_directories(dir);
  RunResult out{tr.hash(), tr.all_rows(), run_summary(tr)};
  write_text_file(dir + "/metrics.csv", metrics_csv(out.rows, out.hash));
  write_text_file(dir + "/summary.json", out.summary.dump(2) + "\n");
  write_text_file(dir + "/config.json", config_to_json(cfg).dump(2) + "\n");
  tr.save_checkpoint(dir + "/checkpoint.bin");
  return out;
}

inline RunResult cmd_run(const ExperimentConfig& cfg,
                         const std::optional<std::string>& resume = std::nullopt) {
  const Dataset ds = load_dataset(cfg);
  return cmd_run(cfg, ds, resume);
}

// ---- ablate ----------------------------------------------------------------

struct AblationVariant {
  std::string name;
  ExperimentConfig config;
};

// Top-level config keys each axis is allowed to vary.
inline std::vector<std::string> ablation_axis_keys(const std::string& axis) {
  if (axis == "modality") return {"ablation"};
  if (axis == "strategy") return {"fusion", "router_freeze"};
  if (axis == "noise") return {"noise"};
  if (axis == "sampling") return {"sampling_ratio"};
  throw ValidationError("unknown ablation axis: " + axis +
                        " (expected modality, strategy, noise or sampling)");
}

inline std::vector<AblationVariant> ablation_grid(const ExperimentConfig& base,
                                                  const std::string& axis) {
  ablation_axis_keys(axis);
  const std::string root = base.output_dir + "/ablate-" + axis;
  std::vector<AblationVariant> out;
  auto add = [&](std::string name, ExperimentConfig c) {
    c.output_dir = root + "/" + name;
    out.push_back({std::move(name), std::move(c)});
  };
  if (axis == "modality") {
    auto c = base;
    c.ablation = {};
    add("full", c);
    c.ablation.drop_visual = true;
    add("no-visual", c);
    c.ablation = {};
    c.ablation.drop_text = true;
    add("no-text", c);
    c.ablation = {};
    c.ablation.drop_id = true;
    add("no-id", c);
  } else if (axis == "strategy") {
    for (auto mode : {model::FusionMode::kMix, model::FusionMode::kSum,
                      model::FusionMode::kMlp, model::FusionMode::kGate}) {
      auto c = base;
      c.fusion = mode;
      c.router_freeze.reset();
      add(std::string(model::fusion_mode_name(mode)), c);
    }
  } else if (axis == "noise") {
    auto c = base;
    c.noise.enabled = false;
    c.noise.variance = 0.0;
    add("variance-0", c);
    c.noise.enabled = true;
    c.noise.variance = base.ablate.noise_variance;
    char buf[64];
    std::snprintf(buf, sizeof buf, "variance-%g", base.ablate.noise_variance);
    add(buf, c);
  } else {
    for (double r : base.ablate.sampling_ratios) {
      auto c = base;
      c.sampling_ratio = r;
      char buf[64];
      std::snprintf(buf, sizeof buf, "ratio-%g", r);
      add(buf, c);
    }
  }
  for (auto& v : out) v.config.validate();
  return out;
}

// Hash of a config with the axis keys removed; equal for every member of one
// grid.
inline std::string ablation_base_hash(const ExperimentConfig& c,
                                      const std::string& axis) {
  return config_hash(c, ablation_axis_keys(axis));
}

struct ComparisonRow {
  std::string variant;
  std::string config_hash;
  std::size_t best_round = 0;
  std::size_t k = 0;
  double hr = 0.0;
  double ndcg = 0.0;
};

// Reads finished variant runs and lines up their test metrics. Refuses runs
// whose configs differ in anything but the axis keys.
inline std::vector<ComparisonRow> compare_runs(const std::vector<std::string>& names,
                                               const std::vector<std::string>& dirs,
                                               const std::string& axis,
                                               std::string* base_hash_out = nullptr) {
  std::optional<std::string> base;
  std::vector<ComparisonRow> rows;
  for (std::size_t v = 0; v < dirs.size(); ++v) {
    const auto cfg = config_from_json(read_json_file(dirs[v] + "/config.json"));
    const auto summary = nlohmann::json::parse(read_text_file(dirs[v] + "/summary.json"));
    const std::string h = ablation_base_hash(cfg, axis);
    if (!base) base = h;
    if (h != *base)
      throw ValidationError("ablate: " + dirs[v] +
                            " was produced by a config that differs outside the " +
                            axis + " axis (base hash " + h + " vs " + *base + ")");
    if (summary.at("config_hash").get<std::string>() != config_hash(cfg))
      throw ValidationError("ablate: " + dirs[v] +
                            "/summary.json does not match its config.json");
    for (const auto& [k, m] : summary.at("test").items())
      rows.push_back({names[v], summary.at("config_hash").get<std::string>(),
                      summary.at("best_round").get<std::size_t>(),
                      static_cast<std::size_t>(std::stoull(k)), m.at("HR").get<double>(),
                      m.at("NDCG").get<double>()});
  }
  if (base_hash_out && base) *base_hash_out = *base;
  return rows;
}

inline std::string comparison_csv(const std::string& axis, const std::string& base_hash,
                                  const std::vector<ComparisonRow>& rows) {
  std::string out = "# base_config_hash=" + base_hash + "\n";
  out += "axis,variant,config_hash,best_round,K,HR,NDCG\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%zu,%zu,%.17g,%.17g\n", axis.c_str(),
                  r.variant.c_str(), r.config_hash.c_str(), r.best_round, r.k, r.hr,
                  r.ndcg);
    out += buf;
  }
  return out;
}

// Runs (unless compare_only) every variant of the axis grid, then writes
// `<output_dir>/ablate-<axis>/comparison.csv`.
inline std::vector<ComparisonRow> cmd_ablate(const ExperimentConfig& base,
                                             const std::string& axis, bool compare_only,
                                             std::ostream& log) {
  const auto grid = ablation_grid(base, axis);
  std::optional<Dataset> ds;
  std::vector<std::string> names, dirs;
  for (const auto& v : grid) {
    if (!compare_only) {
      if (!ds) ds = load_dataset(v.config);
      cmd_run(v.config, *ds);
      log << "finished " << axis << "/" << v.name << "\n";
    }
    names.push_back(v.name);
    dirs.push_back(v.config.output_dir);
  }
  std::string base_hash;
  auto rows = compare_runs(names, dirs, axis, &base_hash);
  const std::string csv = comparison_csv(axis, base_hash, rows);
  write_text_file(base.output_dir + "/ablate-" + axis + "/comparison.csv", csv);
  log << csv;
  return rows;
}

// ---- dump-embeddings -------------------------------------------------------

// Writes one CSV block per source: mapped V, mapped C, D, and F_bar for each
// requested user, from the best-validation state in the checkpoint. With
// per-client mapping layers the V and C blocks are emitted per user.
inline void cmd_dump_embeddings(const std::string& checkpoint,
                                const std::vector<std::string>& user_ids,
                                const std::string& out_path) {
  ExperimentConfig cfg = Trainer::checkpoint_config(checkpoint);
  const Dataset ds = load_dataset(cfg);
  std::vector<std::size_t> users;
  for (const auto& id : user_ids) {
    auto u = ds.users.find(id);
    if (!u) throw ValidationError("dump-embeddings: unknown user id " + id);
    users.push_back(*u);
  }
  Trainer tr(cfg, ds);
  tr.load_checkpoint(checkpoint);
  const auto& state = tr.best_state();
  const auto& spec = tr.spec();

  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write " + out_path);
  out << "block,item";
  for (std::size_t c = 0; c < spec.d(); ++c) out << ",c" << c;
  out << "\n";
  char buf[64];
  auto block = [&](const std::string& tag, const Tensor& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      out << tag << ',' << r;
      for (std::size_t c = 0; c < m.cols(); ++c) {
        std::snprintf(buf, sizeof buf, ",%.17g", m.at(r, c));
        out << buf;
      }
      out << "\n";
    }
  };
  std::vector<std::size_t> all(ds.n_items());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto mapped_sources = [&](const ParamStore* local) {
    Tape t;
    auto p = fusion::Binder::constants(t, {local, &state.server.shared});
    const auto src = model::sources(t, spec, p, tr.tables(), all);
    return std::vector<Tensor>{t.value(src.visual), t.value(src.text), t.value(src.id)};
  };
  if (spec.share_feature_maps) {
    const auto src = mapped_sources(nullptr);
    block("V", src[0]);
    block("C", src[1]);
    block("D", src[2]);
  } else {
    block("D", mapped_sources(&state.clients.front().local)[2]);
  }
  for (std::size_t k = 0; k < users.size(); ++k) {
    const std::size_t u = users[k];
    const ParamStore& local = state.clients[u].local;
    const std::string id = user_ids[k];
    if (!spec.share_feature_maps) {
      const auto src = mapped_sources(&local);
      block("V:" + id, src[0]);
      block("C:" + id, src[1]);
    }
    const auto fs = strategy_tables(spec, state.server.shared,
                                    spec.share_feature_maps ? nullptr : &local,
                                    tr.tables());
    block("F:" + id, user_fused(spec, local, fs, ds.split.train.items[u]));
  }
  if (!out) throw RuntimeError("short write to " + out_path);
}

// ---- synth -----------------------------------------------------------------

inline void cmd_synth(const data::SynthSpec& spec, const std::string& dir) {
  std::filesystem::create_directories(dir);
  data::write_synth_dataset(dir, data::synth_dataset(spec));
}

}  // namespace fedmr
