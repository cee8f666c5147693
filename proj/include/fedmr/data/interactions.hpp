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
#include <charconv>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fedmr/error.hpp"

namespace fedmr::data {

inline constexpr std::size_t kNoIndex = std::numeric_limits<std::size_t>::max();

// Bidirectional external id <-> dense index map. Indices are assigned in
// first-insertion order.
class IdIndex {
 public:
  std::size_t intern(std::string_view id) {
    auto it = lookup_.find(std::string(id));
    if (it != lookup_.end()) return it->second;
    const std::size_t idx = ids_.size();
    ids_.emplace_back(id);
    lookup_.emplace(ids_.back(), idx);
    return idx;
  }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = lookup_.find(std::string(id));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& id(std::size_t idx) const { return ids_.at(idx); }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  // Keeps entries whose remap value is not kNoIndex, at the new positions.
  IdIndex remapped(const std::vector<std::size_t>& old_to_new) const {
    std::size_t n = 0;
    for (auto v : old_to_new)
      if (v != kNoIndex) n = std::max(n, v + 1);
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < old_to_new.size(); ++i)
      if (old_to_new[i] != kNoIndex) ids[old_to_new[i]] = ids_[i];
    IdIndex out;
    for (auto& s : ids) out.intern(s);
    return out;
  }

  friend bool operator==(const IdIndex& a, const IdIndex& b) {
    return a.ids_ == b.ids_;
  }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

// Implicit feedback: per-user strictly increasing item index lists.
struct InteractionMatrix {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::vector<std::vector<std::size_t>> items;
  // Empty, or aligned with `items` (one timestamp per interaction).
  std::vector<std::vector<std::int64_t>> timestamps;

  bool has_timestamps() const { return !timestamps.empty(); }

  std::size_t interaction_count() const {
    std::size_t n = 0;
    for (const auto& u : items) n += u.size();
    return n;
  }

  bool contains(std::size_t user, std::size_t item) const {
    const auto& v = items[user];
    return std::binary_search(v.begin(), v.end(), item);
  }

  // Throws RuntimeError if the matrix breaks its invariants.
  void validate() const {
    if (items.size() != n_users)
      throw RuntimeError("interaction matrix: user count mismatch");
    if (has_timestamps() && timestamps.size() != n_users)
      throw RuntimeError("interaction matrix: timestamp rows mismatch");
    for (std::size_t u = 0; u < n_users; ++u) {
      const auto& v = items[u];
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (v[k] >= n_items)
          throw RuntimeError("interaction matrix: item index out of range");
        if (k > 0 && v[k] <= v[k - 1])
          throw RuntimeError("interaction matrix: items not strictly increasing");
      }
      if (has_timestamps() && timestamps[u].size() != v.size())
        throw RuntimeError("interaction matrix: timestamp length mismatch");
    }
  }

  friend bool operator==(const InteractionMatrix&,
                         const InteractionMatrix&) = default;
};

struct LoadedInteractions {
  InteractionMatrix matrix;
  IdIndex users;
  IdIndex items;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return out;
}

template <typename Int>
std::optional<Int> parse_int(std::string_view s) {
  Int v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    return std::nullopt;
  return v;
}

}  // namespace detail

// Collects (user, item[, ts]) events and builds a deduplicated matrix.
// Duplicate events keep the latest timestamp.
class InteractionBuilder {
 public:
  void add(std::size_t user, std::size_t item,
           std::optional<std::int64_t> ts = std::nullopt) {
    if (user >= rows_.size()) rows_.resize(user + 1);
    n_items_ = std::max(n_items_, item + 1);
    any_ts_ = any_ts_ || ts.has_value();
    rows_[user].emplace_back(item, ts.value_or(0));
  }

  void set_shape(std::size_t n_users, std::size_t n_items) {
    if (rows_.size() < n_users) rows_.resize(n_users);
    n_items_ = std::max(n_items_, n_items);
  }

  InteractionMatrix build(bool keep_timestamps) const {
    InteractionMatrix m;
    m.n_users = rows_.size();
    m.n_items = n_items_;
    m.items.resize(m.n_users);
    if (keep_timestamps && any_ts_) m.timestamps.resize(m.n_users);
    for (std::size_t u = 0; u < rows_.size(); ++u) {
      auto row = rows_[u];
      std::sort(row.begin(), row.end());
      for (std::size_t k = 0; k < row.size(); ++k) {
        if (k + 1 < row.size() && row[k + 1].first == row[k].first) continue;
        m.items[u].push_back(row[k].first);
        if (!m.timestamps.empty()) m.timestamps[u].push_back(row[k].second);
      }
    }
    return m;
  }

 private:
  std::vector<std::vector<std::pair<std::size_t, std::int64_t>>> rows_;
  std::size_t n_items_ = 0;
  bool any_ts_ = false;
};

// Reads `user_id<TAB>item_id[<TAB>timestamp]` lines. Either every line has
// a timestamp or none does.
inline LoadedInteractions load_interactions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open interactions file: " + path);
  LoadedInteractions out;
  InteractionBuilder builder;
  std::string line;
  std::size_t line_no = 0;
  std::optional<bool> with_ts;
  std::size_t events = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = detail::split_tabs(line);
    const auto where = path + ":" + std::to_string(line_no);
    if (cols.size() < 2 || cols.size() > 3 || cols[0].empty() ||
        cols[1].empty()) {
      throw ValidationError(where + ": expected user_id<TAB>item_id[<TAB>timestamp]");
    }
    const bool has_ts = cols.size() == 3;
    if (with_ts && *with_ts != has_ts)
      throw ValidationError(where + ": timestamp column present on some lines only");
    with_ts = has_ts;
    std::optional<std::int64_t> ts;
    if (has_ts) {
      ts = detail::parse_int<std::int64_t>(cols[2]);
      if (!ts) throw ValidationError(where + ": timestamp is not an integer");
    }
    builder.add(out.users.intern(cols[0]), out.items.intern(cols[1]), ts);
    ++events;
  }
  if (events == 0) throw ValidationError("interactions file is empty: " + path);
  out.matrix = builder.build(true);
  return out;
}

inline void write_interactions(const std::string& path,
                               const InteractionMatrix& m, const IdIndex& users,
                               const IdIndex& items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path);
  for (std::size_t u = 0; u < m.n_users; ++u) {
    for (std::size_t k = 0; k < m.items[u].size(); ++k) {
      out << users.id(u) << '\t' << items.id(m.items[u][k]);
      if (m.has_timestamps()) out << '\t' << m.timestamps[u][k];
      out << '\n';
    }
  }
}

inline void write_index(const std::string& path, const IdIndex& index) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path);
  for (std::size_t i = 0; i < index.size(); ++i)
    out << i << '\t' << index.id(i) << '\n';
}

// Reads `index<TAB>external_id` lines; indices must be 0..n-1 in order.
// Lines starting with '#' are comments.
inline IdIndex read_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open index file: " + path);
  IdIndex index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto cols = detail::split_tabs(line);
    const auto where = path + ":" + std::to_string(line_no);
    if (cols.size() != 2) throw ValidationError(where + ": expected index<TAB>id");
    auto idx = detail::parse_int<std::size_t>(cols[0]);
    if (!idx || *idx != index.size())
      throw ValidationError(where + ": row indices must be contiguous from 0");
    if (index.find(cols[1]))
      throw ValidationError(where + ": duplicate id " + std::string(cols[1]));
    index.intern(cols[1]);
  }
  return index;
}

struct FilterResult {
  InteractionMatrix matrix;
  std::vector<std::size_t> user_map;  // old -> new, kNoIndex if dropped
  std::vector<std::size_t> item_map;
};

// Drops users with fewer than k interactions, repeating until nothing
// changes, then drops items nobody interacts with and reindexes both sides
// preserving relative order.
inline FilterResult filter_min_interactions(const InteractionMatrix& m,
                                            std::size_t k) {
  if (k < 1) throw ValidationError("filter_min_interactions: k must be >= 1");
  std::vector<bool> keep_user(m.n_users, true);
  std::vector<bool> keep_item(m.n_items, true);
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t u = 0; u < m.n_users; ++u) {
      if (!keep_user[u]) continue;
      std::size_t live = 0;
      for (auto i : m.items[u]) live += keep_item[i] ? 1 : 0;
      if (live < k) {
        keep_user[u] = false;
        changed = true;
      }
    }
    std::vector<bool> used(m.n_items, false);
    for (std::size_t u = 0; u < m.n_users; ++u)
      if (keep_user[u])
        for (auto i : m.items[u])
          if (keep_item[i]) used[i] = true;
    for (std::size_t i = 0; i < m.n_items; ++i) {
      if (keep_item[i] && !used[i]) {
        keep_item[i] = false;
        changed = true;
      }
    }
  }

  FilterResult r;
  r.user_map.assign(m.n_users, kNoIndex);
  r.item_map.assign(m.n_items, kNoIndex);
  std::size_t nu = 0, ni = 0;
  for (std::size_t u = 0; u < m.n_users; ++u)
    if (keep_user[u]) r.user_map[u] = nu++;
  for (std::size_t i = 0; i < m.n_items; ++i)
    if (keep_item[i]) r.item_map[i] = ni++;
  if (nu == 0 || ni == 0)
    throw ValidationError("filter_min_interactions: dataset exhausted");

  r.matrix.n_users = nu;
  r.matrix.n_items = ni;
  r.matrix.items.resize(nu);
  if (m.has_timestamps()) r.matrix.timestamps.resize(nu);
  for (std::size_t u = 0; u < m.n_users; ++u) {
    if (!keep_user[u]) continue;
    const std::size_t nu_idx = r.user_map[u];
    for (std::size_t k2 = 0; k2 < m.items[u].size(); ++k2) {
      const std::size_t i = m.items[u][k2];
      if (!keep_item[i]) continue;
      r.matrix.items[nu_idx].push_back(r.item_map[i]);
      if (m.has_timestamps())
        r.matrix.timestamps[nu_idx].push_back(m.timestamps[u][k2]);
    }
  }
  return r;
}

inline double sparsity(const InteractionMatrix& m) {
  const double cells =
      static_cast<double>(m.n_users) * static_cast<double>(m.n_items);
  return 1.0 - static_cast<double>(m.interaction_count()) / cells;
}

}  // namespace fedmr::data
