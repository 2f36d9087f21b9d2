/*
 * Copyright 2026 The DDG Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ddg/commands.hpp"
#include "ddg/errors.hpp"
#include "ddg/train.hpp"

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fast adversarial training with per-sample dynamic guidance"};
  app.require_subcommand(1);

  std::vector<std::string> overrides;
  std::string output;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "Train one model from a config file");
  std::string train_config;
  train->add_option("config", train_config, "Config JSON, or - for all defaults")->required();
  train->add_option("--set", overrides, "Override a config field, e.g. --set train.epochs=5");
  train->add_option("--output", output, "Run directory (overrides output_dir)");
  auto* train_seed = train->add_option("--seed", seed, "Run seed");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint under attacks on the test split");
  ddg::EvalRequest request;
  std::string eval_config, attacks, eval_output;
  std::size_t limit = 0;
  eval->add_option("checkpoint", request.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--config", eval_config, "Config JSON (default: the run's config.resolved.json)");
  eval->add_option("--set", request.config_overrides, "Override a config field");
  auto* eval_attacks =
      eval->add_option("--attacks", attacks, "Comma list of fgsm, bimN, pgdN, cwN; empty for clean accuracy only");
  auto* eval_seed = eval->add_option("--seed", seed, "Seed for random starts");
  auto* eval_limit = eval->add_option("--limit", limit, "Evaluate only the first N test examples");
  eval->add_option("--output", eval_output, "Directory for the report files");

  auto* ablate = app.add_subcommand("ablate", "Run a confidence-group override sweep");
  std::string ablate_config, sweep;
  bool dry_run = false;
  ablate->add_option("config", ablate_config, "Config JSON, or - for all defaults")->required();
  auto* ablate_sweep = ablate->add_option("--sweep", sweep, "Sweep spec, e.g. groups=4;select=all;budget=16/255");
  ablate->add_option("--set", overrides, "Override a config field");
  ablate->add_option("--output", output, "Sweep directory (overrides output_dir)");
  auto* ablate_seed = ablate->add_option("--seed", seed, "Run seed");
  ablate->add_flag("--dry-run", dry_run, "Validate and list the planned runs without training");

  auto* report = app.add_subcommand("report", "Print tables for a finished train or ablate directory");
  std::string report_dir;
  report->add_option("run_dir", report_dir, "Run or sweep directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ddg::kExitOk : ddg::kExitConfig;
  }

  // Top-level flags go through the same override path as --set, so they are
  // validated once and recorded in the resolved config.
  auto scalar_overrides = [&](CLI::Option* seed_opt) {
    std::vector<std::string> all = overrides;
    if (seed_opt->count()) all.push_back("seed=" + std::to_string(seed));
    if (!output.empty()) all.push_back("output_dir=" + nlohmann::json(output).dump());
    return all;
  };

  try {
    if (*train) {
      return ddg::cmd_train(ddg::load_run_config(train_config, scalar_overrides(train_seed)), std::cout);
    }
    if (*eval) {
      if (!eval_config.empty()) request.config_path = eval_config;
      if (eval_attacks->count()) request.attacks = split_list(attacks);
      if (eval_seed->count()) request.seed = seed;
      if (eval_limit->count()) request.limit = limit;
      if (!eval_output.empty()) request.output_dir = eval_output;
      return ddg::cmd_eval(request, std::cout);
    }
    if (*ablate) {
      auto all = scalar_overrides(ablate_seed);
      if (ablate_sweep->count()) all.push_back("ablation.sweep=" + nlohmann::json(sweep).dump());
      return ddg::cmd_ablate(ddg::load_run_config(ablate_config, all, ddg::ablation_defaults()), dry_run, std::cout);
    }
    return ddg::cmd_report(report_dir, std::cout);
  } catch (const ddg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ddg::kExitConfig;
  } catch (const ddg::NanLossError& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return ddg::kExitNanAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ddg::kExitFailure;
  }
}
