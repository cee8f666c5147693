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
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "fedmr/data/interactions.hpp"
#include "fedmr/error.hpp"
#include "fedmr/rng.hpp"

namespace fedmr::data {

// Leave-one-out split: one validation and one test item per user.
struct Split {
  InteractionMatrix train;
  std::vector<std::size_t> val_item;
  std::vector<std::size_t> test_item;

  std::size_t n_users() const { return train.n_users; }
  std::size_t n_items() const { return train.n_items; }

  // Train positives plus both held-out items, sorted.
  std::vector<std::size_t> all_items(std::size_t u) const {
    std::vector<std::size_t> v = train.items[u];
    v.push_back(val_item[u]);
    v.push_back(test_item[u]);
    std::sort(v.begin(), v.end());
    return v;
  }

  friend bool operator==(const Split&, const Split&) = default;
};

// With timestamps, the latest interaction is the test item and the second
// latest the validation item (ties resolved by item index). Without, both are
// drawn uniformly from the user's items using a per-user seeded stream.
inline Split leave_one_out_split(const InteractionMatrix& m, std::uint64_t seed) {
  Split s;
  s.train.n_users = m.n_users;
  s.train.n_items = m.n_items;
  s.train.items.resize(m.n_users);
  s.val_item.resize(m.n_users);
  s.test_item.resize(m.n_users);
  for (std::size_t u = 0; u < m.n_users; ++u) {
    const auto& items = m.items[u];
    if (items.size() < 3)
      throw ValidationError("leave_one_out_split: user " + std::to_string(u) +
                            " has " + std::to_string(items.size()) +
                            " interactions, need at least 3");
    std::size_t test_pos, val_pos;
    if (m.has_timestamps()) {
      std::vector<std::size_t> order(items.size());
      std::iota(order.begin(), order.end(), 0);
      const auto& ts = m.timestamps[u];
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return ts[a] < ts[b]; });
      test_pos = order[order.size() - 1];
      val_pos = order[order.size() - 2];
    } else {
      Rng rng(seed, "leave-one-out", u);
      auto pick = rng.sample_without_replacement(items.size(), 2);
      test_pos = pick[0];
      val_pos = pick[1];
    }
    s.test_item[u] = items[test_pos];
    s.val_item[u] = items[val_pos];
    for (std::size_t k = 0; k < items.size(); ++k)
      if (k != test_pos && k != val_pos) s.train.items[u].push_back(items[k]);
  }
  return s;
}

// negatives[u][k] holds `ratio` items for the k-th train positive of user u.
struct NegativeSamples {
  std::size_t ratio = 0;
  std::vector<std::vector<std::vector<std::size_t>>> negatives;
};

// Negatives for each train positive of user u: uniform without replacement
// from items outside I_u (train + held out), drawn from the stream
// (seed, "negatives", u).
inline std::vector<std::vector<std::size_t>> sample_user_negatives(
    const Split& split, std::size_t u, std::size_t ratio, std::uint64_t seed) {
  if (ratio < 1) throw ValidationError("sample_negatives: ratio must be >= 1");
  const auto seen = split.all_items(u);
  if (split.n_items() < seen.size() + ratio)
    throw ValidationError("sample_negatives: user " + std::to_string(u) +
                          " has only " +
                          std::to_string(split.n_items() - seen.size()) +
                          " non-interacted items, ratio is " +
                          std::to_string(ratio));
  std::vector<std::size_t> pool;
  pool.reserve(split.n_items() - seen.size());
  for (std::size_t i = 0, k = 0; i < split.n_items(); ++i) {
    if (k < seen.size() && seen[k] == i) {
      while (k < seen.size() && seen[k] == i) ++k;
      continue;
    }
    pool.push_back(i);
  }
  Rng rng(seed, "negatives", u);
  std::vector<std::vector<std::size_t>> out(split.train.items[u].size());
  for (auto& negs : out)
    for (auto idx : rng.sample_without_replacement(pool.size(), ratio))
      negs.push_back(pool[idx]);
  return out;
}

inline NegativeSamples sample_negatives(const Split& split, std::size_t ratio,
                                        std::uint64_t seed) {
  NegativeSamples out;
  out.ratio = ratio;
  out.negatives.resize(split.n_users());
  for (std::size_t u = 0; u < split.n_users(); ++u)
    out.negatives[u] = sample_user_negatives(split, u, ratio, seed);
  if (split.n_users() == 0 && ratio < 1)
    throw ValidationError("sample_negatives: ratio must be >= 1");
  return out;
}

// `user<TAB>val_item<TAB>test_item` using dense indices.
inline void write_heldout(const std::string& path, const Split& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path);
  for (std::size_t u = 0; u < s.n_users(); ++u)
    out << u << '\t' << s.val_item[u] << '\t' << s.test_item[u] << '\n';
}

inline void write_train(const std::string& path, const InteractionMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + path);
  for (std::size_t u = 0; u < m.n_users; ++u)
    for (auto i : m.items[u]) out << u << '\t' << i << '\n';
}

inline Split read_split(const std::string& train_path,
                        const std::string& heldout_path, std::size_t n_users,
                        std::size_t n_items) {
  Split s;
  s.train.n_users = n_users;
  s.train.n_items = n_items;
  s.train.items.resize(n_users);
  s.val_item.assign(n_users, kNoIndex);
  s.test_item.assign(n_users, kNoIndex);
  auto parse = [&](const std::string& path, std::size_t ncols, auto&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto cols = detail::split_tabs(line);
      std::vector<std::size_t> v;
      for (auto c : cols) {
        auto x = detail::parse_int<std::size_t>(c);
        if (!x) break;
        v.push_back(*x);
      }
      if (v.size() != ncols || v[0] >= n_users ||
          std::any_of(v.begin() + 1, v.end(),
                      [&](std::size_t i) { return i >= n_items; }))
        throw ValidationError(path + ":" + std::to_string(line_no) +
                              ": malformed or out-of-range row");
      fn(v);
    }
  };
  parse(train_path, 2, [&](const std::vector<std::size_t>& v) {
    s.train.items[v[0]].push_back(v[1]);
  });
  parse(heldout_path, 3, [&](const std::vector<std::size_t>& v) {
    s.val_item[v[0]] = v[1];
    s.test_item[v[0]] = v[2];
  });
  for (std::size_t u = 0; u < n_users; ++u) {
    auto& v = s.train.items[u];
    std::sort(v.begin(), v.end());
    if (std::adjacent_find(v.begin(), v.end()) != v.end())
      throw ValidationError(train_path + ": duplicate interaction for user " +
                            std::to_string(u));
    if (v.empty() || s.val_item[u] == kNoIndex)
      throw ValidationError("split for user " + std::to_string(u) +
                            " is incomplete");
  }
  return s;
}

}  // namespace fedmr::data
