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

// fedmr: prepare, run, ablate, dump-embeddings, synth.
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedmr/experiment.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool config_required = true) {
  auto* c = cmd->add_option("-c,--config", o.config_path, "experiment config JSON");
  if (config_required) c->required();
  cmd->add_option("--set", o.set, "override a config key: dotted.key=json")
      ->take_all();
  cmd->add_option("--seed", o.seed, "override the seed");
  cmd->add_option("--rounds", o.rounds, "override the number of rounds");
  cmd->add_option("--workers", o.workers, "concurrent clients (0 = all cores)");
  cmd->add_option("--out", o.out, "output directory");
}

fedmr::ExperimentConfig load_config(const CommonOptions& o) {
  fedmr::ConfigOverrides ov;
  ov.assignments = o.set;
  ov.seed = o.seed;
  ov.rounds = o.rounds;
  ov.workers = o.workers;
  ov.output_dir = o.out;
  return fedmr::resolve_config(fedmr::read_json_file(o.config_path), ov);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated multimodal recommendation simulator"};
  app.require_subcommand(1);

  CommonOptions prep_o, run_o, abl_o, syn_o;
  auto* prepare = app.add_subcommand("prepare", "filter, fill and split a dataset");
  add_common(prepare, prep_o);

  std::optional<std::string> resume;
  auto* run = app.add_subcommand("run", "train and evaluate");
  add_common(run, run_o);
  run->add_option("--resume", resume, "continue from a checkpoint");

  std::string axis;
  bool compare_only = false;
  auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
  add_common(ablate, abl_o);
  ablate->add_option("--axis", axis, "modality, strategy, noise or sampling")->required();
  ablate->add_flag("--compare-only", compare_only,
                   "compare existing variant runs without training");

  std::string checkpoint, dump_out = "embeddings.csv";
  std::vector<std::string> users;
  auto* dump = app.add_subcommand("dump-embeddings", "export V, C, D and fused tables");
  dump->add_option("--checkpoint", checkpoint, "checkpoint.bin from a run")->required();
  dump->add_option("--user", users, "external user id (repeatable)");
  dump->add_option("--out", dump_out, "output CSV");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, syn_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*prepare) {
      fedmr::cmd_prepare(load_config(prep_o), std::cout);
    } else if (*run) {
      const auto cfg = load_config(run_o);
      const auto r = fedmr::cmd_run(cfg, resume);
      std::cout << "config_hash " << r.hash << "\n";
      for (const auto& row : r.rows)
        if (row.split == "test")
          std::printf("test round %zu HR@%zu %.6f NDCG@%zu %.6f\n", row.round, row.k,
                      row.hr, row.k, row.ndcg);
      std::cout << "wrote " << cfg.output_dir << "\n";
    } else if (*ablate) {
      fedmr::cmd_ablate(load_config(abl_o), axis, compare_only, std::cout);
    } else if (*dump) {
      fedmr::cmd_dump_embeddings(checkpoint, users, dump_out);
      std::cout << "wrote " << dump_out << "\n";
    } else if (*synth) {
      const auto cfg = load_config(syn_o);
      if (!cfg.data.synth)
        throw fedmr::ValidationError("synth: config has no data.synth spec");
      fedmr::cmd_synth(*cfg.data.synth, cfg.output_dir);
      std::cout << "wrote " << cfg.output_dir << "\n";
    }
  } catch (const fedmr::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
