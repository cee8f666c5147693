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

// Synthetic implicit-feedback datasets with a planted multimodal signal.
//
// Users draw latents p_u; items draw a content latent z_i (visible through
// both modality tables as noisy linear views) and an ID-only latent e_i that
// no table reveals. Preference uses q_i = sqrt(mix) z_i + sqrt(1 - mix) e_i,
// so signal_mix sets how much of the preference is recoverable from content.
// Each (u, i) is kept with probability sigmoid(scale * <p_u, q_i> / sqrt(k)
// + offset); users below the minimum get further Bernoulli passes over the
// remaining items until they reach it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "fedmr/data/interactions.hpp"
#include "fedmr/data/modality.hpp"
#include "fedmr/error.hpp"
#include "fedmr/rng.hpp"
#include "fedmr/tensor.hpp"

namespace fedmr::data {

struct SynthSpec {
  std::size_t n_users = 200;
  std::size_t n_items = 500;
  std::size_t raw_dim = 32;
  std::size_t latent_dim = 8;
  double signal_mix = 0.8;
  std::uint64_t seed = 0;
  double density = 0.04;          // target mean interaction probability
  double preference_scale = 4.0;  // logit scale of <p_u, q_i> / sqrt(k)
  double feature_noise = 0.1;     // std of additive noise on raw features
  std::size_t min_per_user = 5;
  double missing_visual = 0.0;    // fraction of rows flagged missing
  double missing_text = 0.0;

  void validate() const {
    if (!(signal_mix >= 0.0 && signal_mix <= 1.0))
      throw ValidationError("synth: signal_mix must be in [0, 1]");
    if (n_users == 0 || n_items == 0 || raw_dim == 0 || latent_dim == 0)
      throw ValidationError("synth: sizes must be positive");
    if (static_cast<double>(n_users) * static_cast<double>(n_items) > 1e7)
      throw ValidationError("synth: n_users * n_items exceeds 1e7");
    if (min_per_user > n_items)
      throw ValidationError("synth: min_per_user exceeds n_items");
    if (!(density > 0.0 && density < 1.0))
      throw ValidationError("synth: density must be in (0, 1)");
    if (!(missing_visual >= 0.0 && missing_visual < 1.0) ||
        !(missing_text >= 0.0 && missing_text < 1.0))
      throw ValidationError("synth: missing fractions must be in [0, 1)");
    if (!(feature_noise >= 0.0) || !(preference_scale >= 0.0))
      throw ValidationError("synth: noise and scale must be nonnegative");
  }
};

struct SynthTruth {
  Tensor user_latent;     // n_users x k
  Tensor item_content;    // n_items x k (z)
  Tensor item_id_latent;  // n_items x k (e)
  Tensor proj_visual;     // raw_dim x k
  Tensor proj_text;       // raw_dim x k
  double offset = 0.0;
};

struct SynthDataset {
  LoadedInteractions interactions;
  ModalityTable visual;
  ModalityTable text;
  std::vector<float> text_fill;  // fill row for missing text
  SynthTruth truth;
};

namespace detail {

inline Tensor gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                              double stddev) {
  Tensor t = Tensor::zeros(rows, cols);
  for (auto& v : t.storage()) v = rng.normal(0.0, stddev);
  return t;
}

}  // namespace detail

inline double synth_affinity(const SynthTruth& t, double mix, std::size_t u,
                             std::size_t i) {
  const std::size_t k = t.user_latent.cols();
  const double a = std::sqrt(mix), b = std::sqrt(1.0 - mix);
  double s = 0.0;
  for (std::size_t c = 0; c < k; ++c)
    s += t.user_latent.at(u, c) *
         (a * t.item_content.at(i, c) + b * t.item_id_latent.at(i, c));
  return s / std::sqrt(static_cast<double>(k));
}

inline SynthDataset synth_dataset(const SynthSpec& spec) {
  spec.validate();
  const std::size_t nu = spec.n_users, ni = spec.n_items, k = spec.latent_dim;
  SynthDataset out;
  SynthTruth& t = out.truth;
  {
    Rng rng(spec.seed, "synth-latents");
    t.user_latent = detail::gaussian_matrix(rng, nu, k, 1.0);
    t.item_content = detail::gaussian_matrix(rng, ni, k, 1.0);
    t.item_id_latent = detail::gaussian_matrix(rng, ni, k, 1.0);
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(k));
    t.proj_visual = detail::gaussian_matrix(rng, spec.raw_dim, k, proj_std);
    t.proj_text = detail::gaussian_matrix(rng, spec.raw_dim, k, proj_std);
  }

  auto make_table = [&](const Tensor& proj, const char* stream, double missing) {
    Rng rng(spec.seed, stream);
    ModalityTable tab = ModalityTable::zeros(ni, spec.raw_dim);
    for (std::size_t i = 0; i < ni; ++i) {
      for (std::size_t r = 0; r < spec.raw_dim; ++r) {
        double v = 0.0;
        for (std::size_t c = 0; c < k; ++c)
          v += proj.at(r, c) * t.item_content.at(i, c);
        tab.at(i, r) = static_cast<float>(v + rng.normal(0.0, spec.feature_noise));
      }
    }
    if (missing > 0.0) {
      for (std::size_t i = 0; i < ni; ++i) {
        if (rng.uniform() < missing) {
          tab.missing[i] = 1;
          std::fill_n(tab.values.begin() + static_cast<long>(i * spec.raw_dim),
                      spec.raw_dim, 0.0f);
        }
      }
    }
    return tab;
  };
  out.visual = make_table(t.proj_visual, "synth-visual", spec.missing_visual);
  out.text = make_table(t.proj_text, "synth-text", spec.missing_text);
  {
    Rng rng(spec.seed, "synth-text-fill");
    out.text_fill.resize(spec.raw_dim);
    for (auto& v : out.text_fill) v = static_cast<float>(rng.normal(0.0, 1.0));
  }

  // Bisection for the global offset giving the target mean probability.
  std::vector<double> logits(nu * ni);
  for (std::size_t u = 0; u < nu; ++u)
    for (std::size_t i = 0; i < ni; ++i)
      logits[u * ni + i] =
          spec.preference_scale * synth_affinity(t, spec.signal_mix, u, i);
  double lo = -50.0, hi = 50.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    double mean = 0.0;
    for (double z : logits) mean += kernel::sigmoid(z + mid);
    mean /= static_cast<double>(logits.size());
    (mean < spec.density ? lo : hi) = mid;
  }
  t.offset = 0.5 * (lo + hi);

  InteractionBuilder builder;
  builder.set_shape(nu, ni);
  for (std::size_t u = 0; u < nu; ++u) {
    Rng rng(spec.seed, "synth-interactions", u);
    std::vector<bool> taken(ni, false);
    std::size_t count = 0;
    while (count < spec.min_per_user) {
      for (std::size_t i = 0; i < ni; ++i) {
        const double p = kernel::sigmoid(logits[u * ni + i] + t.offset);
        if (rng.uniform() < p && !taken[i]) {
          taken[i] = true;
          ++count;
        }
      }
    }
    for (std::size_t i = 0; i < ni; ++i)
      if (taken[i]) builder.add(u, i);
  }
  out.interactions.matrix = builder.build(false);
  for (std::size_t u = 0; u < nu; ++u)
    out.interactions.users.intern("u" + std::to_string(u));
  for (std::size_t i = 0; i < ni; ++i)
    out.interactions.items.intern("i" + std::to_string(i));
  return out;
}

// Writes `<dir>/interactions.tsv`, the modality files in the encoder's
// layout (`modality.v.fmr`, `modality.c.fmr`, `modality.items.tsv`,
// `modality.fill.fmr`) and `truth.tsv`.
inline void write_synth_dataset(const std::string& dir, const SynthDataset& ds) {
  const auto& li = ds.interactions;
  write_interactions(dir + "/interactions.tsv", li.matrix, li.users, li.items);
  write_modality_table(dir + "/modality.v.fmr", ds.visual);
  write_modality_table(dir + "/modality.c.fmr", ds.text);
  write_sidecar(dir + "/modality.items.tsv", li.items);
  ModalityTable fill = ModalityTable::zeros(1, ds.text.dim);
  fill.values = ds.text_fill;
  write_modality_table(dir + "/modality.fill.fmr", fill);

  std::ofstream out(dir + "/truth.tsv", std::ios::binary);
  if (!out) throw RuntimeError("cannot write " + dir + "/truth.tsv");
  out << std::setprecision(17);
  auto dump = [&](const char* tag, const Tensor& m, const IdIndex* ids) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      out << tag << '\t' << (ids ? ids->id(r) : std::to_string(r));
      for (double v : m.row(r)) out << '\t' << v;
      out << '\n';
    }
  };
  out << "offset\t-\t" << ds.truth.offset << '\n';
  dump("user", ds.truth.user_latent, &li.users);
  dump("item_content", ds.truth.item_content, &li.items);
  dump("item_id", ds.truth.item_id_latent, &li.items);
  dump("proj_visual", ds.truth.proj_visual, nullptr);
  dump("proj_text", ds.truth.proj_text, nullptr);
}

}  // namespace fedmr::data
