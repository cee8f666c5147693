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

// Full-catalog top-K evaluation under leave-one-out. Ranking is by
// descending score with ties broken by ascending item index; a user's train
// positives are excluded from their ranking.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedmr/error.hpp"

namespace fedmr::eval {

using RankedList = std::vector<std::size_t>;

// `masked` must be sorted ascending.
inline RankedList rank_items(std::span<const double> scores,
                             std::span<const std::size_t> masked) {
  RankedList out;
  out.reserve(scores.size());
  for (std::size_t i = 0, m = 0; i < scores.size(); ++i) {
    while (m < masked.size() && masked[m] < i) ++m;
    if (m < masked.size() && masked[m] == i) continue;
    out.push_back(i);
  }
  std::stable_sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  return out;
}

// 1-based position of `item` in its ranking without materializing it.
// Returns 0 if the item is masked or outside the catalog.
inline std::size_t hit_rank(std::span<const double> scores,
                            std::span<const std::size_t> masked,
                            std::size_t item) {
  if (item >= scores.size() ||
      std::binary_search(masked.begin(), masked.end(), item))
    return 0;
  const double s = scores[item];
  std::size_t ahead = 0;
  for (std::size_t i = 0, m = 0; i < scores.size(); ++i) {
    while (m < masked.size() && masked[m] < i) ++m;
    if (m < masked.size() && masked[m] == i) continue;
    if (scores[i] > s || (scores[i] == s && i < item)) ++ahead;
  }
  return ahead + 1;
}

inline std::size_t position_of(const RankedList& ranked, std::size_t item) {
  auto it = std::find(ranked.begin(), ranked.end(), item);
  if (it == ranked.end())
    throw ValidationError("held-out item " + std::to_string(item) +
                          " is missing from the ranked catalog");
  return static_cast<std::size_t>(it - ranked.begin()) + 1;
}

inline double ndcg_gain(std::size_t rank, std::size_t k) {
  if (rank == 0 || rank > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

struct MetricReport {
  std::size_t k = 0;
  double hr = 0.0;
  double ndcg = 0.0;
  std::vector<std::size_t> ranks;  // per user, 1-based
};

inline MetricReport metrics_from_ranks(std::vector<std::size_t> ranks,
                                       std::size_t k) {
  MetricReport r;
  r.k = k;
  if (ranks.empty()) return r;
  double hits = 0.0, gain = 0.0;
  for (auto rank : ranks) {
    if (rank == 0) throw ValidationError("metrics: held-out item not ranked");
    hits += rank <= k ? 1.0 : 0.0;
    gain += ndcg_gain(rank, k);
  }
  const double n = static_cast<double>(ranks.size());
  r.hr = hits / n;
  r.ndcg = gain / n;
  r.ranks = std::move(ranks);
  return r;
}

inline std::vector<std::size_t> ranks_of(const std::vector<RankedList>& ranked,
                                         std::span<const std::size_t> heldout) {
  if (ranked.size() != heldout.size())
    throw ValidationError("metrics: one held-out item per user required");
  std::vector<std::size_t> ranks(ranked.size());
  for (std::size_t u = 0; u < ranked.size(); ++u)
    ranks[u] = position_of(ranked[u], heldout[u]);
  return ranks;
}

// Fraction of users whose held-out item is in their top K.
inline double hr_at_k(const std::vector<RankedList>& ranked,
                      std::span<const std::size_t> heldout, std::size_t k) {
  return metrics_from_ranks(ranks_of(ranked, heldout), k).hr;
}

// Mean of 1/log2(rank + 1) for hits within K (IDCG is 1 with one held-out
// item).
inline double ndcg_at_k(const std::vector<RankedList>& ranked,
                        std::span<const std::size_t> heldout, std::size_t k) {
  return metrics_from_ranks(ranks_of(ranked, heldout), k).ndcg;
}

}  // namespace fedmr::eval
