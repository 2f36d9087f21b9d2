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

#include <filesystem>
#include <string>

#include <json.hpp>

#include "ddg/architectures.hpp"
#include "ddg/classifier.hpp"

namespace ddg {

/// Header of a checkpoint file; readable without touching the weights.
struct CheckpointManifest {
  ArchitectureSpec architecture;
  std::string tag;  ///< "best" or "final"
  int epoch = 0;
  double learning_rate = 0.0;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::size_t parameter_count = 0;
  nlohmann::json metrics = nlohmann::json::object();

  nlohmann::json to_json() const;
  static CheckpointManifest from_json(const nlohmann::json& j);
};

/// Binary layout: "DDGCKPT1", u64 manifest length, manifest JSON, u32 tensor
/// count, then per tensor: u32 name length, name, u32 rank, u64 dims, f32 data.
/// Integers and floats are little-endian. parameter_count is filled in from the model.
void save_checkpoint(const std::filesystem::path& path, Classifier<float>& model, const CheckpointManifest& manifest);
CheckpointManifest read_manifest(const std::filesystem::path& path);
Classifier<float> load_checkpoint(const std::filesystem::path& path, CheckpointManifest* manifest = nullptr);

}  // namespace ddg
