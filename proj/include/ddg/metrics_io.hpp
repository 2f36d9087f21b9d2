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
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddg/train.hpp"

namespace ddg {

/// Appends one compact JSON object per line and flushes after each line, so
/// a crashed run leaves every finished record readable.
class JsonlWriter {
 public:
  JsonlWriter() = default;
  explicit JsonlWriter(const std::filesystem::path& path);

  void write(const nlohmann::json& record);
  bool is_open() const { return out_.is_open(); }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

/// Fraction in [0,1] as a percentage with two decimals; NaN prints as "-".
std::string percent(double fraction);
std::string fixed(double value, int decimals);

struct Table {
  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const;
  /// Columns padded to a common width, numbers right-aligned.
  std::string to_text() const;
  /// Writes <stem>.csv and <stem>.txt.
  void save(const std::filesystem::path& stem) const;
};

/// One row per epoch: learning rate, loss terms, accuracies and the CO flag.
Table metrics_table(const std::vector<MetricsRecord>& history);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace ddg
