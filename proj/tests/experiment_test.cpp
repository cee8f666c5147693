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

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "fedmr/experiment.hpp"
#include "test_util.hpp"

namespace fedmr {
namespace {

using testing_util::read_text;
using testing_util::TempDir;
using testing_util::write_text;

nlohmann::json small_doc(const std::string& out) {
  return {{"data", {{"synth", {{"n_users", 30}, {"n_items", 80}, {"raw_dim", 12},
                                {"seed", 5}, {"density", 0.08}}}}},
          {"d", 8},
          {"rounds", 3},
          {"local_epochs", 2},
          {"k", {5, 20}},
          {"seed", 11},
          {"workers", 1},
          {"output_dir", out}};
}

std::vector<double> values(const Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

ExperimentConfig small_config(const std::string& out) {
  return config_from_json(small_doc(out));
}

// Drops the leading `# config_hash=` line.
std::string without_hash_line(const std::string& csv) {
  EXPECT_EQ(csv.rfind("# config_hash=", 0), 0u);
  return csv.substr(csv.find('\n') + 1);
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cols.push_back(c);
    rows.push_back(cols);
  }
  return rows;
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    if (value)
      ::setenv(name, value, 1);
    else
      ::unsetenv(name);
  }
  ~ScopedEnv() {
    if (old_)
      ::setenv(name_, old_->c_str(), 1);
    else
      ::unsetenv(name_);
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

// ---- config ----------------------------------------------------------------

TEST(Config, RejectsUnknownKeys) {
  auto doc = small_doc("x");
  doc["learning_rate"] = 0.1;
  EXPECT_THROW(config_from_json(doc), ValidationError);
  doc = small_doc("x");
  doc["noise"] = {{"enabled", true}, {"sigma", 0.1}};
  EXPECT_THROW(config_from_json(doc), ValidationError);
  doc = small_doc("x");
  doc["data"]["synth"]["users"] = 3;
  EXPECT_THROW(config_from_json(doc), ValidationError);
}

TEST(Config, RejectsInvalidValues) {
  for (auto [key, value] : std::vector<std::pair<std::string, nlohmann::json>>{
           {"d", 0}, {"sampling_ratio", 0.0}, {"sampling_ratio", 1.5},
           {"fusion", "concat"}, {"backbone", "gru"}, {"k", nlohmann::json::array()},
           {"lr", -1.0}, {"neg_ratio", 0}}) {
    auto doc = small_doc("x");
    doc[key] = value;
    EXPECT_THROW(config_from_json(doc), ValidationError) << key << "=" << value;
  }
}

TEST(Config, DefaultsFollowTheReferenceSetup) {
  const auto c = config_from_json({{"data", {{"prepared", "p"}}}});
  EXPECT_EQ(c.d, 64u);
  EXPECT_EQ(c.local_epochs, 10u);
  EXPECT_EQ(c.batch_size, 2048u);
  EXPECT_EQ(c.neg_ratio, 4u);
  EXPECT_EQ(c.k, std::vector<std::size_t>{50});
  EXPECT_EQ(c.strategies.size(), 3u);
  EXPECT_EQ(c.fusion, model::FusionMode::kMix);
}

TEST(Config, JsonRoundTripIsStable) {
  auto doc = small_doc("out");
  doc["noise"] = {{"enabled", true}, {"variance", 0.1}};
  doc["router_freeze"] = "gate";
  const auto c = config_from_json(doc);
  const auto j = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(j)), j);
  EXPECT_EQ(config_hash(config_from_json(j)), config_hash(c));
}

TEST(Config, OverridePrecedence) {
  auto doc = small_doc("x");
  doc["seed"] = 1;
  ConfigOverrides o;
  o.assignments = {"seed=2", "noise.variance=0.25", "data.synth.n_users=40"};
  {
    ScopedEnv env("FEDMR_SEED", nullptr);
    const auto c = resolve_config(doc, o);
    EXPECT_EQ(c.seed, 2u);
    EXPECT_DOUBLE_EQ(c.noise.variance, 0.25);
    EXPECT_EQ(c.data.synth->n_users, 40u);
  }
  ScopedEnv env("FEDMR_SEED", "3");
  EXPECT_EQ(resolve_config(doc, o).seed, 3u);
  o.seed = 4;
  EXPECT_EQ(resolve_config(doc, o).seed, 4u);
  o.seed.reset();
  o.use_env = false;
  EXPECT_EQ(resolve_config(doc, o).seed, 2u);
}

TEST(Config, BadEnvSeedIsAValidationError) {
  ScopedEnv env("FEDMR_SEED", "abc");
  EXPECT_THROW(resolve_config(small_doc("x"), {}), ValidationError);
}

TEST(Config, HashIgnoresOnlyOutputLocationAndWorkers) {
  const auto base = small_config("a");
  auto c = base;
  c.output_dir = "b";
  c.workers = 7;
  EXPECT_EQ(config_hash(c), config_hash(base));
  c.lr = 0.2;
  EXPECT_NE(config_hash(c), config_hash(base));
  c = base;
  c.noise.enabled = true;
  EXPECT_NE(config_hash(c), config_hash(base));
  EXPECT_EQ(config_hash(c, {"noise"}), config_hash(base, {"noise"}));
}

// ---- run -------------------------------------------------------------------

TEST(Run, MetricsCsvSchema) {
  TempDir dir;
  const auto cfg = small_config(dir.str());
  cmd_run(cfg);
  const std::string csv = read_text(dir.file("metrics.csv"));
  std::istringstream in(csv);
  std::string first, header;
  std::getline(in, first);
  std::getline(in, header);
  EXPECT_EQ(first, "# config_hash=" + config_hash(cfg));
  EXPECT_EQ(header, "v1,round,split,K,HR,NDCG,loss,seconds");
  auto rows = parse_csv(csv);
  rows.erase(rows.begin());
  std::map<std::pair<std::string, std::string>, long> last;
  std::size_t val = 0, test = 0;
  for (const auto& r : rows) {
    ASSERT_EQ(r.size(), 8u);
    EXPECT_EQ(r[0], "v1");
    const long round = std::stol(r[1]);
    const auto key = std::make_pair(r[2], r[3]);
    if (last.count(key)) {
      EXPECT_GT(round, last[key]);
    }
    last[key] = round;
    const double hr = std::stod(r[4]), ndcg = std::stod(r[5]);
    EXPECT_GE(hr, 0.0);
    EXPECT_LE(hr, 1.0);
    EXPECT_LE(ndcg, hr);
    EXPECT_EQ(r[7], "0");
    (r[2] == "val" ? val : test) += 1;
  }
  EXPECT_EQ(val, 3u * 2u);
  EXPECT_EQ(test, 2u);
  for (const char* f : {"summary.json", "checkpoint.bin", "config.json"})
    EXPECT_TRUE(std::filesystem::exists(dir.file(f))) << f;
  const auto summary = nlohmann::json::parse(read_text(dir.file("summary.json")));
  EXPECT_EQ(summary["config_hash"], config_hash(cfg));
  EXPECT_EQ(summary["parameter_counts"]["shared"]["id_embedding"].get<std::size_t>(),
            summary["dataset"]["items"].get<std::size_t>() * 8);
}

TEST(Run, FixedSeedIsByteIdenticalAcrossWorkerCounts) {
  TempDir a, b, c;
  auto cfg = small_config(a.str());
  cmd_run(cfg);
  cfg.output_dir = b.str();
  cmd_run(cfg);
  cfg.output_dir = c.str();
  cfg.workers = 4;
  cmd_run(cfg);
  const auto ref = read_text(a.file("metrics.csv"));
  EXPECT_EQ(read_text(b.file("metrics.csv")), ref);
  EXPECT_EQ(read_text(c.file("metrics.csv")), ref);
  EXPECT_EQ(read_text(c.file("checkpoint.bin")), read_text(a.file("checkpoint.bin")));
}

TEST(Run, DifferentSeedsDiffer) {
  TempDir a, b;
  auto cfg = small_config(a.str());
  cmd_run(cfg);
  cfg.output_dir = b.str();
  cfg.seed = 12;
  cmd_run(cfg);
  EXPECT_NE(without_hash_line(read_text(a.file("metrics.csv"))),
            without_hash_line(read_text(b.file("metrics.csv"))));
}

TEST(Run, ZeroRoundsKeepsInitialization) {
  auto cfg = small_config("unused");
  cfg.rounds = 0;
  const Dataset ds = load_dataset(cfg);
  Trainer tr(cfg, ds);
  const auto init = tr.state().server.shared;
  tr.run();
  EXPECT_TRUE(tr.history().empty());
  EXPECT_EQ(tr.round(), 0u);
  ASSERT_EQ(tr.state().server.shared.size(), init.size());
  for (std::size_t i = 0; i < init.size(); ++i)
    EXPECT_EQ(values(tr.state().server.shared.entries()[i].param.value),
              values(init.entries()[i].param.value));
  ASSERT_EQ(tr.test_rows().size(), 2u);
  EXPECT_EQ(tr.test_rows()[0].round, 0u);
}

TEST(Run, ZeroLearningRateLeavesParametersUnchanged) {
  auto cfg = small_config("unused");
  cfg.lr = 0.0;
  cfg.rounds = 2;
  const Dataset ds = load_dataset(cfg);
  Trainer tr(cfg, ds);
  const auto init = tr.state();
  tr.run();
  for (std::size_t i = 0; i < init.server.shared.size(); ++i)
    EXPECT_EQ(values(tr.state().server.shared.entries()[i].param.value),
              values(init.server.shared.entries()[i].param.value));
}

TEST(Run, EarlyStoppingHonoursPatience) {
  auto cfg = small_config("unused");
  cfg.lr = 0.0;  // validation HR never improves after round 1
  cfg.rounds = 10;
  cfg.patience = 2;
  const Dataset ds = load_dataset(cfg);
  Trainer tr(cfg, ds);
  tr.run();
  EXPECT_TRUE(tr.stopped_early());
  EXPECT_EQ(tr.round(), 3u);
  EXPECT_EQ(tr.best_round(), 1u);
  EXPECT_EQ(tr.test_rows().front().round, 1u);
}

TEST(Run, SumModeMatchesMixFrozenOnSum) {
  TempDir a, b;
  auto cfg = small_config(a.str());
  cfg.fusion = model::FusionMode::kSum;
  cmd_run(cfg);
  cfg.output_dir = b.str();
  cfg.fusion = model::FusionMode::kMix;
  cfg.router_freeze = fusion::Strategy::kSum;
  cmd_run(cfg);
  EXPECT_EQ(without_hash_line(read_text(a.file("metrics.csv"))),
            without_hash_line(read_text(b.file("metrics.csv"))));
}

TEST(Run, SmallSynthRoundIsFast) {
  TempDir dir;
  auto doc = small_doc(dir.str());
  doc["data"]["synth"]["n_users"] = 10;
  doc["rounds"] = 1;
  doc["local_epochs"] = 10;
  doc["d"] = 64;
  const auto start = std::chrono::steady_clock::now();
  cmd_run(config_from_json(doc));
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(),
            10.0);
}

TEST(Run, LocalFeatureMapsAndMlpBackboneRun) {
  TempDir dir;
  auto cfg = small_config(dir.str());
  cfg.share_feature_maps = false;
  cfg.backbone = model::Backbone::kMlp;
  cfg.alpha = federation::AlphaScheme::kSizeProportional;
  cfg.sampling_ratio = 0.3;
  cfg.avoid_repeat = true;
  const auto r = cmd_run(cfg);
  const auto counts = r.summary["parameter_counts"];
  EXPECT_EQ(counts["shared"]["feature_maps"], 0);
  EXPECT_GT(counts["per_client"]["feature_maps"].get<std::size_t>(), 0u);
}

TEST(Run, ValidationNeverReadsTestItems) {
  auto cfg = small_config("unused");
  const Dataset ds = load_dataset(cfg);
  Dataset shuffled = ds;
  // Move every test item somewhere else; validation must not notice.
  for (std::size_t u = 0; u < ds.n_users(); ++u) {
    const auto seen = ds.split.all_items(u);
    for (std::size_t i = 0; i < ds.n_items(); ++i)
      if (!std::binary_search(seen.begin(), seen.end(), i)) {
        shuffled.split.test_item[u] = i;
        break;
      }
  }
  Trainer a(cfg, ds), b(cfg, shuffled);
  const auto va = a.evaluate(a.state(), false);
  const auto vb = b.evaluate(b.state(), false);
  ASSERT_EQ(va.size(), vb.size());
  for (std::size_t k = 0; k < va.size(); ++k) EXPECT_EQ(va[k].ranks, vb[k].ranks);
  EXPECT_NE(a.evaluate(a.state(), true)[1].ranks, b.evaluate(b.state(), true)[1].ranks);
}

TEST(Run, TestEvaluationMasksTheValidationItem) {
  auto cfg = small_config("unused");
  const Dataset ds = load_dataset(cfg);
  Dataset swapped = ds;
  std::swap(swapped.split.val_item, swapped.split.test_item);
  Trainer a(cfg, ds), b(cfg, swapped);
  // With the same scores, ranking test with val masked equals ranking val
  // with test masked in the swapped split.
  const auto ta = a.evaluate(a.state(), true);
  const auto tb = b.evaluate(b.state(), true);
  const auto va = a.evaluate(a.state(), false);
  for (std::size_t u = 0; u < ds.n_users(); ++u) {
    // The test rank excludes the val item, so it is at most the unmasked rank.
    EXPECT_GE(ta[0].ranks[u], 1u);
    EXPECT_LE(tb[0].ranks[u], va[0].ranks[u]);
  }
}

// ---- checkpoint ------------------------------------------------------------

TEST(Checkpoint, ResumeIsBitwiseIdentical) {
  TempDir full, half, resumed;
  auto cfg = small_config(full.str());
  cfg.rounds = 4;
  cfg.sampling_ratio = 0.5;
  cfg.avoid_repeat = true;
  cfg.noise.enabled = true;
  cmd_run(cfg);

  auto part = cfg;
  part.rounds = 2;
  part.output_dir = half.str();
  cmd_run(part);

  auto rest = cfg;
  rest.output_dir = resumed.str();
  cmd_run(rest, half.file("checkpoint.bin"));
  EXPECT_EQ(read_text(resumed.file("metrics.csv")), read_text(full.file("metrics.csv")));
  EXPECT_EQ(read_text(resumed.file("checkpoint.bin")),
            read_text(full.file("checkpoint.bin")));
}

TEST(Checkpoint, RejectsMismatchedConfig) {
  TempDir dir;
  auto cfg = small_config(dir.str());
  cmd_run(cfg);
  cfg.lr = 0.05;
  EXPECT_THROW(cmd_run(cfg, dir.file("checkpoint.bin")), ValidationError);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  TempDir dir;
  cmd_run(small_config(dir.str()));
  const auto bytes = read_text(dir.file("checkpoint.bin"));
  write_text(dir.file("trunc.bin"), bytes.substr(0, bytes.size() / 2));
  write_text(dir.file("magic.bin"), "XXXX" + bytes.substr(4));
  auto cfg = small_config(dir.str());
  EXPECT_THROW(cmd_run(cfg, dir.file("trunc.bin")), ValidationError);
  EXPECT_THROW(cmd_run(cfg, dir.file("magic.bin")), ValidationError);
}

// ---- dump-embeddings -------------------------------------------------------

TEST(DumpEmbeddings, BlocksAndRecompute) {
  TempDir dir;
  const auto cfg = small_config(dir.str());
  cmd_run(cfg);
  const Dataset ds = load_dataset(cfg);
  const std::vector<std::string> users = {ds.users.id(0), ds.users.id(7)};
  cmd_dump_embeddings(dir.file("checkpoint.bin"), users, dir.file("emb.csv"));
  auto rows = parse_csv(read_text(dir.file("emb.csv")));
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows[0][0], "block");
  rows.erase(rows.begin());
  std::map<std::string, std::vector<std::vector<double>>> blocks;
  for (const auto& r : rows) {
    ASSERT_EQ(r.size(), 2u + 8u);
    std::vector<double> v;
    for (std::size_t c = 2; c < r.size(); ++c) v.push_back(std::stod(r[c]));
    blocks[r[0]].push_back(v);
  }
  EXPECT_EQ(blocks.size(), 3u + users.size());
  for (const auto& [tag, b] : blocks) EXPECT_EQ(b.size(), ds.n_items()) << tag;

  // Independent recompute of F_bar = sum_j w_j F_j from the checkpoint.
  Trainer tr(cfg, ds);
  tr.load_checkpoint(dir.file("checkpoint.bin"));
  const auto& st = tr.best_state();
  const auto fs = strategy_tables(tr.spec(), st.server.shared, nullptr, tr.tables());
  for (std::size_t k = 0; k < users.size(); ++k) {
    const std::size_t u = *ds.users.find(users[k]);
    const Tensor w = user_mix_weights(tr.spec(), st.clients[u].local, fs,
                                      ds.split.train.items[u]);
    double wsum = 0.0;
    for (double x : w.data()) wsum += x;
    EXPECT_NEAR(wsum, 1.0, 1e-12);
    const auto& dumped = blocks["F:" + users[k]];
    for (std::size_t i = 0; i < ds.n_items(); ++i)
      for (std::size_t c = 0; c < 8; ++c) {
        double f = 0.0;
        for (std::size_t j = 0; j < fs.size(); ++j) f += w[j] * fs[j].at(i, c);
        EXPECT_NEAR(dumped[i][c], f, 1e-12);
      }
  }
  // D block equals the stored table exactly.
  const Tensor& d = st.server.shared.at("D").value;
  for (std::size_t i = 0; i < ds.n_items(); ++i)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(blocks["D"][i][c], d.at(i, c));
}

TEST(DumpEmbeddings, NoUsersAndUnknownUser) {
  TempDir dir;
  cmd_run(small_config(dir.str()));
  cmd_dump_embeddings(dir.file("checkpoint.bin"), {}, dir.file("emb.csv"));
  std::set<std::string> tags;
  for (const auto& r : parse_csv(read_text(dir.file("emb.csv")))) tags.insert(r[0]);
  EXPECT_EQ(tags, (std::set<std::string>{"block", "V", "C", "D"}));
  EXPECT_THROW(cmd_dump_embeddings(dir.file("checkpoint.bin"), {"nobody"},
                                   dir.file("x.csv")),
               ValidationError);
}

// ---- ablate ----------------------------------------------------------------

TEST(Ablate, GridSizes) {
  const auto base = small_config("out");
  EXPECT_EQ(ablation_grid(base, "modality").size(), 4u);
  EXPECT_EQ(ablation_grid(base, "strategy").size(), 4u);
  EXPECT_EQ(ablation_grid(base, "noise").size(), 2u);
  EXPECT_EQ(ablation_grid(base, "sampling").size(), base.ablate.sampling_ratios.size());
  EXPECT_THROW(ablation_grid(base, "depth"), ValidationError);
  for (const auto& axis : {"modality", "strategy", "noise", "sampling"}) {
    std::set<std::string> hashes, dirs;
    for (const auto& v : ablation_grid(base, axis)) {
      EXPECT_EQ(ablation_base_hash(v.config, axis), ablation_base_hash(base, axis));
      hashes.insert(config_hash(v.config));
      dirs.insert(v.config.output_dir);
    }
    EXPECT_EQ(hashes.size(), ablation_grid(base, axis).size()) << axis;
    EXPECT_EQ(dirs.size(), hashes.size());
  }
}

TEST(Ablate, NoiseAxisRunsAndRefusesMismatchedOutputs) {
  TempDir dir;
  auto cfg = small_config(dir.str());
  cfg.rounds = 1;
  cfg.k = {10};
  std::ostringstream log;
  const auto rows = cmd_ablate(cfg, "noise", false, log);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].variant, "variance-0");
  EXPECT_EQ(rows[1].variant, "variance-0.1");
  EXPECT_NE(rows[0].config_hash, rows[1].config_hash);
  const std::string csv = read_text(dir.str() + "/ablate-noise/comparison.csv");
  EXPECT_EQ(csv.rfind("# base_config_hash=" + ablation_base_hash(cfg, "noise"), 0), 0u);
  EXPECT_EQ(parse_csv(csv).size(), 3u);

  // Compare-only works on untouched outputs, then refuses a tampered one.
  EXPECT_NO_THROW(cmd_ablate(cfg, "noise", true, log));
  const std::string tampered = dir.str() + "/ablate-noise/variance-0/config.json";
  auto j = nlohmann::json::parse(read_text(tampered));
  j["lr"] = 0.5;
  write_text(tampered, j.dump());
  EXPECT_THROW(cmd_ablate(cfg, "noise", true, log), ValidationError);
}

// ---- prepare / synth -------------------------------------------------------

std::vector<std::string> prepared_files() {
  return {"interactions.tsv", "users.tsv",  "items.tsv", "train.tsv",
          "heldout.tsv",      "visual.fmr", "text.fmr",  "stats.json"};
}

TEST(Prepare, IsIdempotentAndMatchesDirectSynth) {
  TempDir a, b, runs;
  auto cfg = small_config(a.str());
  cfg.data.synth->missing_visual = 0.1;
  cfg.data.synth->missing_text = 0.1;
  std::ostringstream log;
  const Dataset direct = cmd_prepare(cfg, log);
  EXPECT_NE(log.str().find("users\titems\tinteractions\tsparsity"), std::string::npos);
  cfg.output_dir = b.str();
  cmd_prepare(cfg, log);
  for (const auto& f : prepared_files())
    EXPECT_EQ(read_text(a.file(f)), read_text(b.file(f))) << f;

  const Dataset loaded = read_prepared(a.str());
  EXPECT_EQ(loaded.split.train.items, direct.split.train.items);
  EXPECT_EQ(loaded.split.val_item, direct.split.val_item);
  EXPECT_EQ(loaded.split.test_item, direct.split.test_item);
  EXPECT_EQ(loaded.visual, direct.visual);
  EXPECT_EQ(loaded.text, direct.text);
  EXPECT_EQ(loaded.raw.interactions, direct.raw.interactions);

  auto run_direct = cfg;
  run_direct.output_dir = runs.file("direct");
  auto run_prepared = run_direct;
  run_prepared.data = {};
  run_prepared.data.prepared = a.str();
  run_prepared.output_dir = runs.file("prepared");
  cmd_run(run_direct);
  cmd_run(run_prepared);
  EXPECT_EQ(without_hash_line(read_text(runs.file("direct/metrics.csv"))),
            without_hash_line(read_text(runs.file("prepared/metrics.csv"))));
}

TEST(Prepare, SynthFilesPassPrepareUnchanged) {
  TempDir raw, via_raw, via_synth;
  auto cfg = small_config(via_synth.str());
  cfg.data.synth->missing_visual = 0.2;
  cfg.data.synth->missing_text = 0.2;
  cmd_synth(*cfg.data.synth, raw.str());
  for (const char* f : {"interactions.tsv", "modality.v.fmr", "modality.c.fmr",
                        "modality.items.tsv", "modality.fill.fmr", "truth.tsv"})
    EXPECT_TRUE(std::filesystem::exists(raw.file(f))) << f;
  std::ostringstream log;
  cmd_prepare(cfg, log);

  auto rc = cfg;
  rc.data.synth.reset();
  rc.data.raw = RawDataConfig{};
  rc.data.raw->interactions = raw.file("interactions.tsv");
  rc.data.raw->modality_prefix = raw.file("modality");
  rc.output_dir = via_raw.str();
  cmd_prepare(rc, log);

  // Item numbering follows file order on the raw path, so compare by id.
  const Dataset a = read_prepared(via_synth.str()), b = read_prepared(via_raw.str());
  ASSERT_EQ(a.n_users(), b.n_users());
  ASSERT_EQ(a.n_items(), b.n_items());
  EXPECT_EQ(a.interaction_count(), b.interaction_count());
  auto pairs = [](const Dataset& ds) {
    std::set<std::pair<std::string, std::string>> out;
    for (std::size_t u = 0; u < ds.n_users(); ++u)
      for (auto i : ds.split.all_items(u)) out.insert({ds.users.id(u), ds.items.id(i)});
    return out;
  };
  EXPECT_EQ(pairs(a), pairs(b));
  for (std::size_t i = 0; i < a.n_items(); ++i) {
    const std::size_t j = *b.items.find(a.items.id(i));
    for (std::size_t c = 0; c < a.visual.dim; ++c) {
      EXPECT_EQ(a.visual.at(i, c), b.visual.at(j, c));
      EXPECT_EQ(a.text.at(i, c), b.text.at(j, c));
    }
  }
}

TEST(Prepare, SidecarOrderIsHonoured) {
  TempDir raw, a, b;
  auto cfg = small_config(a.str());
  cmd_synth(*cfg.data.synth, raw.str());
  auto rc = cfg;
  rc.data.synth.reset();
  rc.data.raw = RawDataConfig{};
  rc.data.raw->interactions = raw.file("interactions.tsv");
  rc.data.raw->modality_prefix = raw.file("modality");
  std::ostringstream log;
  cmd_prepare(rc, log);

  // Reverse the row order of both tables and the sidecar.
  const auto ids = data::read_sidecar(raw.file("modality.items.tsv"));
  std::vector<std::size_t> rev(ids.size());
  data::IdIndex rev_ids;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    rev[r] = ids.size() - 1 - r;
    rev_ids.intern(ids.id(rev[r]));
  }
  for (const char* f : {"modality.v.fmr", "modality.c.fmr"})
    data::write_modality_table(raw.file(f),
                               data::load_modality_table(raw.file(f)).select_rows(rev));
  data::write_sidecar(raw.file("modality.items.tsv"), rev_ids);
  rc.output_dir = b.str();
  cmd_prepare(rc, log);
  for (const auto& f : prepared_files())
    EXPECT_EQ(read_text(a.file(f)), read_text(b.file(f))) << f;
}

TEST(Prepare, MissingModalityFileIsActionable) {
  TempDir raw, out;
  auto cfg = small_config(out.str());
  cmd_synth(*cfg.data.synth, raw.str());
  std::filesystem::remove(raw.file("modality.v.fmr"));
  cfg.data.synth.reset();
  cfg.data.raw = RawDataConfig{};
  cfg.data.raw->interactions = raw.file("interactions.tsv");
  cfg.data.raw->modality_prefix = raw.file("modality");
  std::ostringstream log;
  try {
    cmd_prepare(cfg, log);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("modality.v.fmr"), std::string::npos) << e.what();
  }
}

TEST(Prepare, SidecarMissingAnItemIsAnError) {
  TempDir raw, out;
  auto cfg = small_config(out.str());
  cmd_synth(*cfg.data.synth, raw.str());
  const auto ids = data::read_sidecar(raw.file("modality.items.tsv"));
  data::IdIndex renamed;
  for (std::size_t r = 0; r < ids.size(); ++r)
    renamed.intern(r == 0 ? std::string("ghost") : ids.id(r));
  data::write_sidecar(raw.file("modality.items.tsv"), renamed);
  cfg.data.synth.reset();
  cfg.data.raw = RawDataConfig{};
  cfg.data.raw->interactions = raw.file("interactions.tsv");
  cfg.data.raw->modality_prefix = raw.file("modality");
  std::ostringstream log;
  EXPECT_THROW(cmd_prepare(cfg, log), ValidationError);
}

TEST(Synth, FixedSeedIsByteIdentical) {
  TempDir a, b;
  const auto spec = *small_config("x").data.synth;
  cmd_synth(spec, a.str());
  cmd_synth(spec, b.str());
  for (const char* f : {"interactions.tsv", "modality.v.fmr", "modality.c.fmr",
                        "modality.items.tsv", "modality.fill.fmr", "truth.tsv"})
    EXPECT_EQ(read_text(a.file(f)), read_text(b.file(f))) << f;
}

// ---- CLI -------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FEDMR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  write_text(dir.file("good.json"), small_doc(dir.file("out")).dump());
  auto bad = small_doc(dir.file("out"));
  bad["colour"] = "blue";
  write_text(dir.file("bad.json"), bad.dump());
  auto unwritable = small_doc("/proc/fedmr-cannot-write-here");
  write_text(dir.file("unwritable.json"), unwritable.dump());

  EXPECT_EQ(run_cli("run --config " + dir.file("good.json") + " --rounds 1"), 0);
  EXPECT_TRUE(std::filesystem::exists(dir.file("out/metrics.csv")));
  EXPECT_EQ(run_cli("run --config " + dir.file("bad.json")), 1);
  EXPECT_EQ(run_cli("run --config " + dir.file("missing.json")), 1);
  EXPECT_EQ(run_cli("ablate --config " + dir.file("good.json") + " --axis depth"), 1);
  EXPECT_EQ(run_cli("dump-embeddings --checkpoint " + dir.file("out/checkpoint.bin") +
                    " --user nobody --out " + dir.file("e.csv")),
            1);
  EXPECT_EQ(run_cli("run --config " + dir.file("unwritable.json") + " --rounds 1"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("--help"), 0);
}

TEST(Cli, FlagsOverrideConfig) {
  TempDir dir;
  write_text(dir.file("c.json"), small_doc(dir.file("ignored")).dump());
  ASSERT_EQ(run_cli("run --config " + dir.file("c.json") + " --rounds 2 --seed 99 --workers 2" +
                    " --set lr=0.05 --out " + dir.file("out")),
            0);
  const auto cfg = config_from_json(read_json_file(dir.file("out/config.json")));
  EXPECT_EQ(cfg.rounds, 2u);
  EXPECT_EQ(cfg.seed, 99u);
  EXPECT_EQ(cfg.workers, 2u);
  EXPECT_DOUBLE_EQ(cfg.lr, 0.05);
  EXPECT_FALSE(std::filesystem::exists(dir.file("ignored")));
}

}  // namespace
}  // namespace fedmr
