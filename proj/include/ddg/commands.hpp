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

#pragma once

// The four CLI commands as library calls. Each writes its artifacts to disk
// and its human-readable output to `out`, and returns a process exit code.

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ddg/config.hpp"
#include "ddg/data.hpp"

namespace ddg {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitNanAbort = 3,
  kExitPartialSweep = 4,
};

struct DataBundle {
  IndexedDataset train;
  IndexedDataset holdout;
  IndexedDataset test;
};

/// Resolves the configured dataset. The train split is divided into train
/// and holdout by data.holdout_fraction.
DataBundle load_data(const RunConfig& config, bool want_train, bool want_test);

/// Trains into config.run_dir(): config.resolved.json, metrics.jsonl,
/// timing.jsonl, metrics.csv/.txt and checkpoints/{best,final}.ckpt.
/// A NaN loss propagates as NanLossError after the finished epochs are on disk.
int cmd_train(const RunConfig& config, std::ostream& out);

struct EvalRequest {
  std::filesystem::path checkpoint;
  /// Defaults to config.resolved.json of the run the checkpoint belongs to.
  std::optional<std::filesystem::path> config_path;
  std::vector<std::string> config_overrides;
  /// Unset means eval.test_attacks from the config; empty means clean only.
  std::optional<std::vector<std::string>> attacks;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> limit;
  /// Defaults to <run>/eval.
  std::optional<std::filesystem::path> output_dir;
};

/// Clean and per-attack test accuracy, written as eval_<checkpoint>.json/.csv/.txt.
int cmd_eval(const EvalRequest& request, std::ostream& out);

/// Runs config.ablation.sweep into config.run_dir(): sweep_records.jsonl,
/// runs/<label>/{metrics.jsonl,trajectory.csv,curves.svg}, summary.csv/.txt
/// and plots/<metric>.svg. With `dry_run` only the plan is printed.
int cmd_ablate(const RunConfig& config, bool dry_run, std::ostream& out);

/// Tables for a finished train or ablate directory, written next to the inputs.
int cmd_report(const std::filesystem::path& run_dir, std::ostream& out);

}  // namespace ddg
