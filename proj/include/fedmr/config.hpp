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

// Experiment configuration: a single JSON document with strict key checking,
// command-line overrides and a canonical hash.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmr/data/synth.hpp"
#include "fedmr/error.hpp"
#include "fedmr/federation.hpp"
#include "fedmr/fusion.hpp"
#include "fedmr/model.hpp"
#include "fedmr/rng.hpp"

namespace fedmr {

using Json = nlohmann::json;

// Paths to a raw interaction log and encoder output.
struct RawDataConfig {
  std::string interactions;
  // `<prefix>.v.fmr`, `<prefix>.c.fmr`, `<prefix>.items.tsv`,
  // `<prefix>.fill.fmr`; explicit paths below take precedence.
  std::string modality_prefix;
  std::string visual;
  std::string visual_items;
  std::string text;
  std::string text_items;
  std::string text_fill;

  std::string visual_path() const { return pick(visual, ".v.fmr"); }
  std::string visual_items_path() const { return pick(visual_items, ".items.tsv"); }
  std::string text_path() const { return pick(text, ".c.fmr"); }
  std::string text_items_path() const { return pick(text_items, ".items.tsv"); }
  std::string text_fill_path() const { return pick(text_fill, ".fill.fmr"); }

 private:
  std::string pick(const std::string& explicit_path, const char* suffix) const {
    if (!explicit_path.empty()) return explicit_path;
    if (modality_prefix.empty()) return {};
    return modality_prefix + suffix;
  }
};

struct DataConfig {
  std::string prepared;  // directory written by `prepare`
  std::optional<data::SynthSpec> synth;
  std::optional<RawDataConfig> raw;
  std::size_t min_interactions = 5;
  // Compute the visual mean fill over all items instead of filtered ones.
  bool fill_before_filter = false;
};

struct AblateConfig {
  std::vector<double> sampling_ratios = {0.1, 0.25, 0.5, 1.0};
  double noise_variance = 0.1;
};

struct ExperimentConfig {
  DataConfig data;
  std::size_t d = 64;
  std::vector<fusion::Strategy> strategies = {
      fusion::Strategy::kSum, fusion::Strategy::kMlp, fusion::Strategy::kGate};
  model::FusionMode fusion = model::FusionMode::kMix;
  bool elementwise_gate = false;
  model::Backbone backbone = model::Backbone::kDot;
  federation::AlphaScheme alpha = federation::AlphaScheme::kUniform;
  bool alpha_in_local_loss = false;
  double lr = 0.1;
  std::size_t rounds = 20;
  std::size_t local_epochs = 10;
  std::size_t batch_size = 2048;
  std::size_t neg_ratio = 4;
  double sampling_ratio = 1.0;
  bool avoid_repeat = false;
  federation::NoiseConfig noise;
  model::Ablation ablation;
  std::optional<fusion::Strategy> router_freeze;
  bool share_feature_maps = true;
  std::vector<std::size_t> k = {50};
  std::size_t patience = 0;  // 0 disables early stopping
  std::uint64_t seed = 0;
  std::string output_dir = "fedmr-out";
  std::size_t workers = 0;  // 0 means one per logical core
  bool record_wall_time = false;
  double init_id_std = 0.1;
  AblateConfig ablate;

  std::size_t worker_count() const {
    if (workers > 0) return workers;
    return std::max(1u, std::thread::hardware_concurrency());
  }

  // Strategies the model instantiates: the configured list in mix mode, the
  // chosen one otherwise.
  std::vector<fusion::Strategy> active_strategies() const {
    switch (fusion) {
      case model::FusionMode::kMix: return strategies;
      case model::FusionMode::kSum: return {fusion::Strategy::kSum};
      case model::FusionMode::kMlp: return {fusion::Strategy::kMlp};
      case model::FusionMode::kGate: return {fusion::Strategy::kGate};
    }
    return strategies;
  }

  model::ModelSpec model_spec(std::size_t raw_dim_visual,
                              std::size_t raw_dim_text) const {
    model::ModelSpec spec;
    spec.fusion.d = d;
    spec.fusion.raw_dim_visual = raw_dim_visual;
    spec.fusion.raw_dim_text = raw_dim_text;
    spec.fusion.strategies = active_strategies();
    spec.fusion.elementwise_gate = elementwise_gate;
    spec.mode = fusion;
    spec.backbone = backbone;
    spec.ablation = ablation;
    spec.share_feature_maps = share_feature_maps;
    if (router_freeze) {
      const auto& list = spec.fusion.strategies;
      spec.frozen_route = static_cast<std::size_t>(
          std::find(list.begin(), list.end(), *router_freeze) - list.begin());
    }
    return spec;
  }

  void validate() const;
};

namespace config_detail {

static_assert(std::is_same_v<std::uint64_t, std::size_t>,
              "seeds are read through the size_t accessor");

// Reads one JSON object, tracking which keys were consumed so leftovers can
// be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const Json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  void get(const char* key, bool& out) {
    if (const Json* v = child(key)) {
      if (!v->is_boolean()) fail(key, "must be a boolean");
      out = v->get<bool>();
    }
  }
  void get(const char* key, double& out) {
    if (const Json* v = child(key)) {
      if (!v->is_number()) fail(key, "must be a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, std::size_t& out) {
    if (const Json* v = child(key)) out = to_unsigned(*v, key);
  }
  void get(const char* key, std::string& out) {
    if (const Json* v = child(key)) {
      if (!v->is_string()) fail(key, "must be a string");
      out = v->get<std::string>();
    }
  }
  template <typename T, typename Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (has(key)) out = wrap(key, [&] { return parse(s); });
  }

  std::size_t to_unsigned(const Json& v, const char* key) const {
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0)
      return static_cast<std::size_t>(v.get<long long>());
    fail(key, "must be a nonnegative integer");
    return 0;
  }

  template <typename F>
  auto wrap(const char* key, F&& f) const -> decltype(f()) {
    try {
      return f();
    } catch (const ValidationError& e) {
      fail(key, e.what());
      throw;
    }
  }

  std::string path(const char* key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  [[noreturn]] void fail(const char* key, const std::string& msg) const {
    const std::string where = *key ? path(key) : (path_.empty() ? "config" : path_);
    throw ValidationError("config: " + where + " " + msg);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ValidationError("config: unknown key " + path(it.key().c_str()));
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline data::SynthSpec parse_synth(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  data::SynthSpec s;
  r.get("n_users", s.n_users);
  r.get("n_items", s.n_items);
  r.get("raw_dim", s.raw_dim);
  r.get("latent_dim", s.latent_dim);
  r.get("signal_mix", s.signal_mix);
  r.get("seed", s.seed);
  r.get("density", s.density);
  r.get("preference_scale", s.preference_scale);
  r.get("feature_noise", s.feature_noise);
  r.get("min_per_user", s.min_per_user);
  r.get("missing_visual", s.missing_visual);
  r.get("missing_text", s.missing_text);
  r.finish();
  s.validate();
  return s;
}

inline Json synth_to_json(const data::SynthSpec& s) {
  return {{"n_users", s.n_users},         {"n_items", s.n_items},
          {"raw_dim", s.raw_dim},         {"latent_dim", s.latent_dim},
          {"signal_mix", s.signal_mix},   {"seed", s.seed},
          {"density", s.density},         {"preference_scale", s.preference_scale},
          {"feature_noise", s.feature_noise}, {"min_per_user", s.min_per_user},
          {"missing_visual", s.missing_visual}, {"missing_text", s.missing_text}};
}

}  // namespace config_detail

inline Json synth_spec_to_json(const data::SynthSpec& s) {
  return config_detail::synth_to_json(s);
}

inline data::SynthSpec synth_spec_from_json(const Json& j) {
  return config_detail::parse_synth(j, "synth");
}

inline void ExperimentConfig::validate() const {
  const int sources = (data.prepared.empty() ? 0 : 1) + (data.synth ? 1 : 0) +
                      (data.raw ? 1 : 0);
  if (sources != 1)
    throw ValidationError(
        "config: data needs exactly one of prepared, synth or raw");
  if (data.raw) {
    if (data.raw->interactions.empty())
      throw ValidationError("config: data.raw.interactions is required");
    if (data.raw->visual_path().empty() || data.raw->text_path().empty() ||
        data.raw->visual_items_path().empty() || data.raw->text_items_path().empty())
      throw ValidationError(
          "config: data.raw needs modality_prefix or explicit visual, "
          "visual_items, text and text_items paths");
  }
  if (data.min_interactions < 3)
    throw ValidationError("config: data.min_interactions must be >= 3");
  if (d == 0) throw ValidationError("config: d must be positive");
  if (strategies.empty()) throw ValidationError("config: strategies is empty");
  for (std::size_t a = 0; a < strategies.size(); ++a)
    for (std::size_t b = a + 1; b < strategies.size(); ++b)
      if (strategies[a] == strategies[b])
        throw ValidationError("config: duplicate strategy " +
                              std::string(fusion::strategy_name(strategies[a])));
  if (router_freeze) {
    if (fusion != model::FusionMode::kMix)
      throw ValidationError("config: router_freeze requires fusion mix");
    if (std::find(strategies.begin(), strategies.end(), *router_freeze) ==
        strategies.end())
      throw ValidationError("config: router_freeze names a strategy not in strategies");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr))
    throw ValidationError("config: lr must be finite and >= 0");
  if (batch_size == 0) throw ValidationError("config: batch_size must be positive");
  if (neg_ratio == 0) throw ValidationError("config: neg_ratio must be >= 1");
  if (!(sampling_ratio > 0.0 && sampling_ratio <= 1.0))
    throw ValidationError("config: sampling_ratio must be in (0, 1]");
  if (!(noise.variance >= 0.0) || !std::isfinite(noise.variance))
    throw ValidationError("config: noise.variance must be finite and >= 0");
  if (k.empty()) throw ValidationError("config: k is empty");
  for (auto kk : k)
    if (kk == 0) throw ValidationError("config: every k must be positive");
  if (!(init_id_std >= 0.0) || !std::isfinite(init_id_std))
    throw ValidationError("config: init_id_std must be finite and >= 0");
  for (double r : ablate.sampling_ratios)
    if (!(r > 0.0 && r <= 1.0))
      throw ValidationError("config: ablate.sampling_ratios must lie in (0, 1]");
  if (!(ablate.noise_variance >= 0.0))
    throw ValidationError("config: ablate.noise_variance must be >= 0");
}

inline ExperimentConfig config_from_json(const Json& j) {
  using config_detail::ObjectReader;
  ExperimentConfig c;
  ObjectReader r(j, "");
  if (const Json* dj = r.child("data")) {
    ObjectReader dr(*dj, "data");
    dr.get("prepared", c.data.prepared);
    if (const Json* s = dr.child("synth"))
      c.data.synth = config_detail::parse_synth(*s, "data.synth");
    if (const Json* rj = dr.child("raw")) {
      ObjectReader rr(*rj, "data.raw");
      RawDataConfig raw;
      rr.get("interactions", raw.interactions);
      rr.get("modality_prefix", raw.modality_prefix);
      rr.get("visual", raw.visual);
      rr.get("visual_items", raw.visual_items);
      rr.get("text", raw.text);
      rr.get("text_items", raw.text_items);
      rr.get("text_fill", raw.text_fill);
      rr.finish();
      c.data.raw = raw;
    }
    dr.get("min_interactions", c.data.min_interactions);
    dr.get("fill_before_filter", c.data.fill_before_filter);
    dr.finish();
  }
  r.get("d", c.d);
  if (const Json* s = r.child("strategies")) {
    if (!s->is_array()) r.fail("strategies", "must be an array of names");
    c.strategies.clear();
    for (const auto& e : *s) {
      if (!e.is_string()) r.fail("strategies", "must be an array of names");
      c.strategies.push_back(
          r.wrap("strategies", [&] { return fusion::parse_strategy(e.get<std::string>()); }));
    }
  }
  r.get_enum("fusion", c.fusion, model::parse_fusion_mode);
  r.get("elementwise_gate", c.elementwise_gate);
  r.get_enum("backbone", c.backbone, model::parse_backbone);
  r.get_enum("alpha", c.alpha, federation::parse_alpha_scheme);
  r.get("alpha_in_local_loss", c.alpha_in_local_loss);
  r.get("lr", c.lr);
  r.get("rounds", c.rounds);
  r.get("local_epochs", c.local_epochs);
  r.get("batch_size", c.batch_size);
  r.get("neg_ratio", c.neg_ratio);
  r.get("sampling_ratio", c.sampling_ratio);
  r.get("avoid_repeat", c.avoid_repeat);
  if (const Json* nj = r.child("noise")) {
    ObjectReader nr(*nj, "noise");
    nr.get("enabled", c.noise.enabled);
    nr.get("variance", c.noise.variance);
    nr.get("on_gradients", c.noise.on_gradients);
    nr.get("on_id_rows", c.noise.on_id_rows);
    nr.finish();
  }
  if (const Json* aj = r.child("ablation")) {
    ObjectReader ar(*aj, "ablation");
    ar.get("drop_v", c.ablation.drop_visual);
    ar.get("drop_c", c.ablation.drop_text);
    ar.get("drop_d", c.ablation.drop_id);
    ar.finish();
  }
  if (const Json* f = r.child("router_freeze")) {
    if (!f->is_null()) {
      if (!f->is_string()) r.fail("router_freeze", "must be a strategy name or null");
      c.router_freeze =
          r.wrap("router_freeze", [&] { return fusion::parse_strategy(f->get<std::string>()); });
    }
  }
  r.get("share_feature_maps", c.share_feature_maps);
  if (const Json* kj = r.child("k")) {
    if (!kj->is_array()) r.fail("k", "must be an array of integers");
    c.k.clear();
    for (const auto& e : *kj) c.k.push_back(r.to_unsigned(e, "k"));
  }
  r.get("patience", c.patience);
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  r.get("workers", c.workers);
  r.get("record_wall_time", c.record_wall_time);
  r.get("init_id_std", c.init_id_std);
  if (const Json* aj = r.child("ablate")) {
    ObjectReader ar(*aj, "ablate");
    if (const Json* s = ar.child("sampling_ratios")) {
      if (!s->is_array()) ar.fail("sampling_ratios", "must be an array of numbers");
      c.ablate.sampling_ratios.clear();
      for (const auto& e : *s) {
        if (!e.is_number()) ar.fail("sampling_ratios", "must be an array of numbers");
        c.ablate.sampling_ratios.push_back(e.get<double>());
      }
    }
    ar.get("noise_variance", c.ablate.noise_variance);
    ar.finish();
  }
  r.finish();
  c.validate();
  return c;
}

// Complete document with every default filled in; keys sort canonically.
inline Json config_to_json(const ExperimentConfig& c) {
  Json data = Json::object();
  if (!c.data.prepared.empty()) data["prepared"] = c.data.prepared;
  if (c.data.synth) data["synth"] = config_detail::synth_to_json(*c.data.synth);
  if (c.data.raw) {
    const auto& r = *c.data.raw;
    data["raw"] = {{"interactions", r.interactions},
                   {"modality_prefix", r.modality_prefix},
                   {"visual", r.visual},
                   {"visual_items", r.visual_items},
                   {"text", r.text},
                   {"text_items", r.text_items},
                   {"text_fill", r.text_fill}};
  }
  data["min_interactions"] = c.data.min_interactions;
  data["fill_before_filter"] = c.data.fill_before_filter;
  Json strategies = Json::array();
  for (auto s : c.strategies) strategies.push_back(fusion::strategy_name(s));
  Json ratios = Json::array();
  for (double r : c.ablate.sampling_ratios) ratios.push_back(r);
  return {
      {"data", data},
      {"d", c.d},
      {"strategies", strategies},
      {"fusion", model::fusion_mode_name(c.fusion)},
      {"elementwise_gate", c.elementwise_gate},
      {"backbone", model::backbone_name(c.backbone)},
      {"alpha", federation::alpha_scheme_name(c.alpha)},
      {"alpha_in_local_loss", c.alpha_in_local_loss},
      {"lr", c.lr},
      {"rounds", c.rounds},
      {"local_epochs", c.local_epochs},
      {"batch_size", c.batch_size},
      {"neg_ratio", c.neg_ratio},
      {"sampling_ratio", c.sampling_ratio},
      {"avoid_repeat", c.avoid_repeat},
      {"noise",
       {{"enabled", c.noise.enabled},
        {"variance", c.noise.variance},
        {"on_gradients", c.noise.on_gradients},
        {"on_id_rows", c.noise.on_id_rows}}},
      {"ablation",
       {{"drop_v", c.ablation.drop_visual},
        {"drop_c", c.ablation.drop_text},
        {"drop_d", c.ablation.drop_id}}},
      {"router_freeze", c.router_freeze
                            ? Json(fusion::strategy_name(*c.router_freeze))
                            : Json(nullptr)},
      {"share_feature_maps", c.share_feature_maps},
      {"k", c.k},
      {"patience", c.patience},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"workers", c.workers},
      {"record_wall_time", c.record_wall_time},
      {"init_id_std", c.init_id_std},
      {"ablate", {{"sampling_ratios", ratios}, {"noise_variance", c.ablate.noise_variance}}},
  };
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// FNV-1a over the canonical JSON, ignoring keys that cannot change results
// (output_dir, workers) plus any caller-supplied top-level keys.
inline std::string config_hash(const ExperimentConfig& c,
                               const std::vector<std::string>& also_ignore = {}) {
  Json j = config_to_json(c);
  j.erase("output_dir");
  j.erase("workers");
  for (const auto& key : also_ignore) j.erase(key);
  return hash_hex(fnv1a(j.dump()));
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open config " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
}

// Applies `dotted.key=value` to a raw document. The value is parsed as JSON,
// falling back to a plain string.
inline void apply_override(Json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ValidationError("override must look like key=value: " +
                          std::string(assignment));
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ValidationError("override has an empty key segment: " + key);
    if (!node->is_object()) throw ValidationError("override path is not an object: " + key);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

struct ConfigOverrides {
  std::vector<std::string> assignments;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> workers;
  std::optional<std::string> output_dir;
  bool use_env = true;  // FEDMR_SEED
};

// Precedence, lowest first: document, --set, FEDMR_SEED, dedicated flags.
inline ExperimentConfig resolve_config(Json doc, const ConfigOverrides& o) {
  if (!doc.is_object()) throw ValidationError("config: top level must be an object");
  for (const auto& a : o.assignments) apply_override(doc, a);
  if (o.use_env) {
    if (const char* env = std::getenv("FEDMR_SEED"); env && *env) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(env, &end, 10);
      if (*end != '\0' || env[0] == '-')
        throw ValidationError("FEDMR_SEED must be a nonnegative integer");
      doc["seed"] = v;
    }
  }
  if (o.seed) doc["seed"] = *o.seed;
  if (o.rounds) doc["rounds"] = *o.rounds;
  if (o.workers) doc["workers"] = *o.workers;
  if (o.output_dir) doc["output_dir"] = *o.output_dir;
  return config_from_json(doc);
}

}  // namespace fedmr
