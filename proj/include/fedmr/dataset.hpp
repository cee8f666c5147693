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

// Dataset assembly: raw logs or synthetic data -> filtered, filled, split
// dataset; plus the on-disk layout written by `prepare`.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmr/config.hpp"
#include "fedmr/data/interactions.hpp"
#include "fedmr/data/modality.hpp"
#include "fedmr/data/split.hpp"
#include "fedmr/data/synth.hpp"
#include "fedmr/error.hpp"
#include "fedmr/model.hpp"
#include "fedmr/rng.hpp"

namespace fedmr {

struct RawStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
};

struct Dataset {
  data::IdIndex users;
  data::IdIndex items;
  data::Split split;
  data::ModalityTable visual;  // filled, row i = item i
  data::ModalityTable text;
  RawStats raw;  // before filtering

  std::size_t n_users() const { return split.n_users(); }
  std::size_t n_items() const { return split.n_items(); }
  std::size_t interaction_count() const {
    return split.train.interaction_count() + 2 * split.n_users();
  }
  double sparsity() const {
    return 1.0 - static_cast<double>(interaction_count()) /
                     (static_cast<double>(n_users()) * static_cast<double>(n_items()));
  }
  model::ItemTables tables() const { return {visual.to_tensor(), text.to_tensor()}; }
  std::vector<std::size_t> train_sizes() const {
    std::vector<std::size_t> s;
    for (const auto& row : split.train.items) s.push_back(row.size());
    return s;
  }
};

namespace dataset_detail {

// Reorders `table` (rows labelled by `sidecar`) to follow `items`.
inline data::ModalityTable align_rows(const data::ModalityTable& table,
                                      const data::IdIndex& sidecar,
                                      const data::IdIndex& items,
                                      const std::string& what) {
  if (table.rows != sidecar.size())
    throw data::RowCountError(what + ": table has " + std::to_string(table.rows) +
                              " rows but its sidecar lists " +
                              std::to_string(sidecar.size()) + " ids");
  std::vector<std::size_t> rows;
  rows.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto r = sidecar.find(items.id(i));
    if (!r)
      throw ValidationError(what + ": no row for item " + items.id(i));
    rows.push_back(*r);
  }
  return table.select_rows(rows);
}

inline std::vector<float> load_fill_vector(const std::string& path,
                                           std::size_t dim) {
  const data::ModalityTable fill = data::load_modality_table(path, 1);
  if (fill.dim != dim)
    throw ValidationError(path + ": fill vector has dim " + std::to_string(fill.dim) +
                          ", text table has " + std::to_string(dim));
  return fill.values;
}

inline void require_file(const std::string& path, const char* what) {
  if (!std::filesystem::exists(path))
    throw ValidationError(std::string("missing ") + what + " file: " + path);
}

}  // namespace dataset_detail

// Filter, fill and split interactions whose modality rows are already aligned
// with the item index.
inline Dataset assemble_dataset(const data::LoadedInteractions& li,
                                data::ModalityTable visual,
                                data::ModalityTable text,
                                const std::vector<float>& text_fill,
                                const ExperimentConfig& cfg) {
  if (visual.rows != li.items.size() || text.rows != li.items.size())
    throw data::RowCountError("modality tables do not cover every item");
  if (text.missing_count() > 0 && text_fill.empty())
    throw ValidationError(
        "text table has missing rows but no fill vector was provided");
  Dataset ds;
  ds.raw = {li.matrix.n_users, li.matrix.n_items, li.matrix.interaction_count()};
  if (cfg.data.fill_before_filter)
    visual = data::fill_missing(std::move(visual), data::FillMode::kMean);

  auto filtered = data::filter_min_interactions(li.matrix, cfg.data.min_interactions);
  ds.users = li.users.remapped(filtered.user_map);
  ds.items = li.items.remapped(filtered.item_map);
  std::vector<std::size_t> kept(filtered.matrix.n_items);
  for (std::size_t old = 0; old < filtered.item_map.size(); ++old)
    if (filtered.item_map[old] != data::kNoIndex) kept[filtered.item_map[old]] = old;
  ds.visual = data::fill_missing(visual.select_rows(kept), data::FillMode::kMean);
  ds.text = data::fill_missing(text.select_rows(kept), data::FillMode::kDesignated,
                               text_fill);
  ds.split = data::leave_one_out_split(filtered.matrix, derive_seed(cfg.seed, "split"));
  return ds;
}

inline Dataset dataset_from_synth(const data::SynthSpec& spec,
                                  const ExperimentConfig& cfg) {
  const data::SynthDataset s = data::synth_dataset(spec);
  return assemble_dataset(s.interactions, s.visual, s.text, s.text_fill, cfg);
}

inline Dataset dataset_from_raw(const RawDataConfig& raw,
                                const ExperimentConfig& cfg) {
  using namespace dataset_detail;
  require_file(raw.interactions, "interactions");
  require_file(raw.visual_path(), "visual modality");
  require_file(raw.visual_items_path(), "visual sidecar");
  require_file(raw.text_path(), "text modality");
  require_file(raw.text_items_path(), "text sidecar");
  const data::LoadedInteractions li = data::load_interactions(raw.interactions);
  auto visual = align_rows(data::load_modality_table(raw.visual_path()),
                           data::read_sidecar(raw.visual_items_path()), li.items,
                           raw.visual_path());
  auto text = align_rows(data::load_modality_table(raw.text_path()),
                         data::read_sidecar(raw.text_items_path()), li.items,
                         raw.text_path());
  std::vector<float> fill;
  if (!raw.text_fill_path().empty() && std::filesystem::exists(raw.text_fill_path()))
    fill = load_fill_vector(raw.text_fill_path(), text.dim);
  else if (!raw.text_fill.empty())
    require_file(raw.text_fill, "text fill");
  return assemble_dataset(li, std::move(visual), std::move(text), fill, cfg);
}

// Files written by `prepare`, relative to its output directory.
struct PreparedLayout {
  std::string dir;
  std::string interactions() const { return dir + "/interactions.tsv"; }
  std::string users() const { return dir + "/users.tsv"; }
  std::string items() const { return dir + "/items.tsv"; }
  std::string train() const { return dir + "/train.tsv"; }
  std::string heldout() const { return dir + "/heldout.tsv"; }
  std::string visual() const { return dir + "/visual.fmr"; }
  std::string text() const { return dir + "/text.fmr"; }
  std::string stats() const { return dir + "/stats.json"; }
};

inline nlohmann::json dataset_stats(const Dataset& ds) {
  return {{"users", ds.n_users()},
          {"items", ds.n_items()},
          {"interactions", ds.interaction_count()},
          {"train_interactions", ds.split.train.interaction_count()},
          {"sparsity", ds.sparsity()},
          {"raw", {{"users", ds.raw.users},
                   {"items", ds.raw.items},
                   {"interactions", ds.raw.interactions}}}};
}

inline void write_prepared(const std::string& dir, const Dataset& ds,
                           const std::string& hash) {
  std::filesystem::create_directories(dir);
  PreparedLayout p{dir};
  data::InteractionMatrix full = ds.split.train;
  for (std::size_t u = 0; u < ds.n_users(); ++u) full.items[u] = ds.split.all_items(u);
  data::write_interactions(p.interactions(), full, ds.users, ds.items);
  data::write_index(p.users(), ds.users);
  data::write_index(p.items(), ds.items);
  data::write_train(p.train(), ds.split.train);
  data::write_heldout(p.heldout(), ds.split);
  data::write_modality_table(p.visual(), ds.visual);
  data::write_modality_table(p.text(), ds.text);
  nlohmann::json stats = dataset_stats(ds);
  stats["config_hash"] = hash;
  std::ofstream out(p.stats(), std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + p.stats());
  out << stats.dump(2) << '\n';
}

inline Dataset read_prepared(const std::string& dir) {
  PreparedLayout p{dir};
  for (const auto& f : {p.users(), p.items(), p.train(), p.heldout(), p.visual(), p.text()})
    dataset_detail::require_file(f, "prepared dataset");
  Dataset ds;
  ds.users = data::read_index(p.users());
  ds.items = data::read_index(p.items());
  ds.split = data::read_split(p.train(), p.heldout(), ds.users.size(), ds.items.size());
  ds.visual = data::load_modality_table(p.visual(), ds.items.size());
  ds.text = data::load_modality_table(p.text(), ds.items.size());
  if (ds.visual.missing_count() > 0 || ds.text.missing_count() > 0)
    throw ValidationError(dir + ": prepared modality tables still have missing rows");
  ds.raw = {ds.n_users(), ds.n_items(), ds.interaction_count()};
  if (std::filesystem::exists(p.stats())) {
    std::ifstream in(p.stats(), std::ios::binary);
    const auto stats = nlohmann::json::parse(in, nullptr, false);
    if (stats.is_object() && stats.contains("raw")) {
      ds.raw.users = stats["raw"].value("users", ds.raw.users);
      ds.raw.items = stats["raw"].value("items", ds.raw.items);
      ds.raw.interactions = stats["raw"].value("interactions", ds.raw.interactions);
    }
  }
  return ds;
}

inline Dataset load_dataset(const ExperimentConfig& cfg) {
  if (!cfg.data.prepared.empty()) return read_prepared(cfg.data.prepared);
  if (cfg.data.synth) return dataset_from_synth(*cfg.data.synth, cfg);
  return dataset_from_raw(*cfg.data.raw, cfg);
}

}  // namespace fedmr
