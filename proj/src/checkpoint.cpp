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

#include "ddg/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "ddg/errors.hpp"

namespace ddg {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'D', 'D', 'G', 'C', 'K', 'P', 'T', '1'};

template <typename U>
void put(std::ofstream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::ifstream& in, const std::filesystem::path& path) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) throw IngestionError(path.string() + ": truncated checkpoint");
  return v;
}

nlohmann::json read_manifest_json(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IngestionError(path.string() + ": not a checkpoint file");
  const auto length = get<std::uint64_t>(in, path);
  if (length > (1u << 26)) throw IngestionError(path.string() + ": implausible manifest length");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw IngestionError(path.string() + ": truncated manifest");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(path.string() + ": corrupt manifest: " + e.what());
  }
}

}  // namespace

nlohmann::json CheckpointManifest::to_json() const {
  return {{"architecture", architecture.id},
          {"width", architecture.resolved_width()},
          {"input", {architecture.input.channels, architecture.input.height, architecture.input.width}},
          {"num_classes", architecture.num_classes},
          {"tag", tag},
          {"epoch", epoch},
          {"optimizer", {{"learning_rate", learning_rate}, {"momentum", momentum}, {"weight_decay", weight_decay}}},
          {"parameter_count", parameter_count},
          {"metrics", metrics}};
}

CheckpointManifest CheckpointManifest::from_json(const nlohmann::json& j) {
  CheckpointManifest m;
  try {
    m.architecture.id = j.at("architecture").get<std::string>();
    m.architecture.width = j.at("width").get<int>();
    const auto& in = j.at("input");
    m.architecture.input = {in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(), in.at(2).get<std::size_t>()};
    m.architecture.num_classes = j.at("num_classes").get<int>();
    m.tag = j.value("tag", "");
    m.epoch = j.at("epoch").get<int>();
    const auto& opt = j.at("optimizer");
    m.learning_rate = opt.at("learning_rate").get<double>();
    m.momentum = opt.at("momentum").get<double>();
    m.weight_decay = opt.at("weight_decay").get<double>();
    m.parameter_count = j.at("parameter_count").get<std::size_t>();
    m.metrics = j.value("metrics", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(std::string("checkpoint manifest is missing fields: ") + e.what());
  }
  return m;
}

void save_checkpoint(const std::filesystem::path& path, Classifier<float>& model, const CheckpointManifest& manifest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write checkpoint " + path.string());
  CheckpointManifest m = manifest;
  m.parameter_count = model.parameter_count();
  const std::string text = m.to_json().dump();
  out.write(kMagic, 8);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto state = model.named_state();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(state.size()));
  for (const auto& [name, t] : state) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
  }
  if (!out) throw IngestionError("failed writing checkpoint " + path.string());
}

CheckpointManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint " + path.string());
  return CheckpointManifest::from_json(read_manifest_json(in, path));
}

Classifier<float> load_checkpoint(const std::filesystem::path& path, CheckpointManifest* manifest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint " + path.string());
  const CheckpointManifest m = CheckpointManifest::from_json(read_manifest_json(in, path));
  Classifier<float> model = make_classifier<float>(m.architecture, 0);

  std::map<std::string, Tensor<float>*> slots;
  for (auto& [name, t] : model.named_state()) slots[name] = t;
  const auto count = get<std::uint32_t>(in, path);
  if (count != slots.size()) {
    throw IngestionError(path.string() + ": " + std::to_string(count) + " tensors stored, architecture has " +
                         std::to_string(slots.size()));
  }
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = get<std::uint32_t>(in, path);
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(in, path);
    auto it = slots.find(name);
    if (it == slots.end() || it->second->shape() != shape) {
      throw IngestionError(path.string() + ": tensor '" + name + "' " + shape_to_string(shape) +
                           " does not fit architecture " + m.architecture.id);
    }
    in.read(reinterpret_cast<char*>(it->second->data()),
            static_cast<std::streamsize>(it->second->size() * sizeof(float)));
    if (!in) throw IngestionError(path.string() + ": truncated tensor data");
  }
  if (manifest) *manifest = m;
  return model;
}

}  // namespace ddg
