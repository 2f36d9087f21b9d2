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

// The declarative run document behind every CLI command. Parsing rejects
// unknown keys and reports each bad field by its dotted path.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddg/architectures.hpp"
#include "ddg/attacks.hpp"
#include "ddg/data.hpp"
#include "ddg/guidance.hpp"
#include "ddg/train.hpp"

namespace ddg {

struct SyntheticDataConfig {
  std::size_t train_size = 256;
  std::size_t test_size = 128;
  int num_classes = 10;
  Geometry geometry = Geometry::kGaussianBlobs;
  std::uint64_t seed = 0;
  InputShape shape{3, 16, 16};
  double margin = 0.1;
  double jitter = 0.02;
  double sigma = 0.15;
};

struct DataConfig {
  std::string kind = "cifar10";  ///< cifar10 | synthetic | file
  /// cifar10: directory of binary batches, empty means $DDG_CIFAR10_DIR.
  /// file: a dataset file written by save_dataset.
  std::string path;
  std::string test_path;  ///< file kind only
  std::size_t train_limit = 0;  ///< 0 keeps everything
  std::size_t test_limit = 0;
  double holdout_fraction = 0.02;
  SyntheticDataConfig synthetic;

  InputShape input_shape() const;
  int num_classes() const;
};

struct EvalConfig {
  double epsilon = 8.0 / 255.0;
  std::vector<std::string> attacks{"pgd10"};  ///< per-epoch holdout evaluation
  std::vector<std::string> test_attacks{"fgsm", "pgd10", "pgd20", "pgd50", "cw"};  ///< eval command default
  std::size_t limit = 0;
  std::size_t batch_size = 256;
};

struct AblationConfig {
  std::string sweep;
  int workers = 1;
};

struct RunConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  std::string output_dir;  ///< empty means <$DDG_OUTPUT_ROOT or ./runs>/<name>
  std::vector<std::string> overrides;  ///< provenance only, never re-applied
  ArchitectureSpec model;  ///< input and num_classes follow the data section
  DataConfig data;
  TrainPlan train;
  GuidanceConfig guidance;  ///< num_classes follows the data section
  EvalConfig eval;
  AblationConfig ablation;

  /// Every field, defaults included.
  nlohmann::json to_json() const;
  /// Overlays `doc` on `base`. Collects every problem before throwing ConfigError.
  /// Unless train.augment is given, augmentation is on only for cifar10 data.
  static RunConfig from_json(const nlohmann::json& doc, const RunConfig& base);
  static RunConfig from_json(const nlohmann::json& doc);

  /// Cross-field checks, including the tau1 < batch size rule.
  void validate() const;
  std::filesystem::path run_dir() const;
};

/// Defaults for the ablate command: 20 epochs at a fixed learning rate with
/// inherited-init uniform budgets, evaluated with pgd10 and cw each epoch.
RunConfig ablation_defaults();

/// Applies one "dotted.key=value" override to a raw document. The value is
/// parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Reads a config file (or "-" for an empty document), applies overrides
/// in order and validates.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                          const RunConfig& base = RunConfig{});

/// Reads a real given as a JSON number or a fraction string such as "8/255".
double parse_real(const nlohmann::json& value);

}  // namespace ddg
