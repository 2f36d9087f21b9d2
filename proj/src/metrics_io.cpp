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

#include "ddg/metrics_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "ddg/errors.hpp"

namespace ddg {

JsonlWriter::JsonlWriter(const std::filesystem::path& path) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::trunc);
  if (!out_) throw IngestionError("cannot write " + path.string());
}

void JsonlWriter::write(const nlohmann::json& record) {
  out_ << record.dump() << '\n';
  out_.flush();
  if (!out_) throw IngestionError("failed writing " + path_.string());
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw IngestionError(path.string() + ":" + std::to_string(n) + ": not valid JSON");
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::vector<MetricsRecord> out;
  for (const auto& j : read_jsonl(path)) {
    try {
      out.push_back(MetricsRecord::from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError(path.string() + ": malformed metrics record: " + e.what());
    }
  }
  return out;
}

std::string fixed(double value, int decimals) {
  if (std::isnan(value)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

std::string percent(double fraction) { return fixed(100.0 * fraction, 2); }

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

bool numeric(const std::string& s) {
  if (s.empty() || s == "-") return !s.empty();
  char* end = nullptr;
  std::strtod(s.c_str(), &end);
  return end && *end == '\0';
}

}  // namespace

std::string Table::to_csv() const {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << csv_field(cells[i]);
    os << '\n';
  };
  line(headers);
  for (const auto& r : rows) line(r);
  return os.str();
}

std::string Table::to_text() const {
  std::vector<std::size_t> width(headers.size());
  for (std::size_t c = 0; c < headers.size(); ++c) width[c] = headers[c].size();
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells, bool header) {
    std::string text;
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string cell = c < cells.size() ? cells[c] : "";
      const std::string pad(width[c] - cell.size(), ' ');
      if (c) text += "  ";
      text += (!header && numeric(cell)) ? pad + cell : cell + pad;
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    os << text << '\n';
  };
  line(headers, true);
  std::size_t total = 0;
  for (auto w : width) total += w;
  os << std::string(total + 2 * (width.empty() ? 0 : width.size() - 1), '-') << '\n';
  for (const auto& r : rows) line(r, false);
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw IngestionError("failed writing " + path.string());
}

void Table::save(const std::filesystem::path& stem) const {
  write_text_file(stem.string() + ".csv", to_csv());
  write_text_file(stem.string() + ".txt", to_text());
}

Table metrics_table(const std::vector<MetricsRecord>& history) {
  Table t;
  t.headers = {"epoch", "lr", "loss", "ce", "smoothness", "train_acc(%)", "clean(%)"};
  std::set<std::string> attacks;
  for (const auto& m : history) {
    for (const auto& [name, acc] : m.robust) attacks.insert(name);
  }
  for (const auto& a : attacks) t.headers.push_back(a + "(%)");
  t.headers.push_back("co");
  for (const auto& m : history) {
    std::vector<std::string> row{std::to_string(m.epoch),   fixed(m.learning_rate, 4),
                                 fixed(m.train_loss, 4),    fixed(m.train_cross_entropy, 4),
                                 fixed(m.train_smoothness, 4), percent(m.train_accuracy),
                                 percent(m.clean_accuracy)};
    for (const auto& a : attacks) {
      const auto acc = m.robust_accuracy(a);
      row.push_back(acc ? percent(*acc) : "-");
    }
    row.push_back(m.co_flag ? "yes" : "no");
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace ddg
