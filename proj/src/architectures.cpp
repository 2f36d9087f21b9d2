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

#include "ddg/architectures.hpp"

#include <algorithm>
#include <random>

#include "ddg/errors.hpp"

namespace ddg {

const std::vector<std::string>& known_architectures() {
  static const std::vector<std::string> ids = {"linear", "tiny-cnn", "resnet18-lite", "resnet18"};
  return ids;
}

int ArchitectureSpec::resolved_width() const {
  if (width > 0) return width;
  if (id == "tiny-cnn") return 32;
  if (id == "resnet18-lite") return 16;
  if (id == "resnet18") return 64;
  return 0;
}

namespace {

template <typename T>
std::vector<std::unique_ptr<Layer<T>>> linear_layers(const ArchitectureSpec& spec) {
  std::vector<std::unique_ptr<Layer<T>>> layers;
  layers.push_back(std::make_unique<Flatten<T>>());
  layers.push_back(std::make_unique<Linear<T>>(spec.input.size(), static_cast<std::size_t>(spec.num_classes)));
  return layers;
}

// conv3x3-relu-pool, conv3x3-relu-pool, linear head.
template <typename T>
std::vector<std::unique_ptr<Layer<T>>> tiny_cnn_layers(const ArchitectureSpec& spec) {
  const auto w = static_cast<std::size_t>(spec.resolved_width());
  if (spec.input.height < 4 || spec.input.width < 4) throw ConfigError("tiny-cnn needs inputs of at least 4x4");
  std::vector<std::unique_ptr<Layer<T>>> layers;
  layers.push_back(std::make_unique<Conv2d<T>>(spec.input.channels, w, 3, 1, 1, true));
  layers.push_back(std::make_unique<ReLU<T>>());
  layers.push_back(std::make_unique<MaxPool2d<T>>());
  layers.push_back(std::make_unique<Conv2d<T>>(w, 2 * w, 3, 1, 1, true));
  layers.push_back(std::make_unique<ReLU<T>>());
  layers.push_back(std::make_unique<MaxPool2d<T>>());
  layers.push_back(std::make_unique<Flatten<T>>());
  const std::size_t features = 2 * w * (spec.input.height / 4) * (spec.input.width / 4);
  layers.push_back(std::make_unique<Linear<T>>(features, static_cast<std::size_t>(spec.num_classes)));
  return layers;
}

template <typename T>
std::vector<std::unique_ptr<Layer<T>>> resnet18_layers(const ArchitectureSpec& spec) {
  const auto w = static_cast<std::size_t>(spec.resolved_width());
  std::vector<std::unique_ptr<Layer<T>>> layers;
  layers.push_back(std::make_unique<Conv2d<T>>(spec.input.channels, w, 3, 1, 1, false));
  layers.push_back(std::make_unique<BatchNorm2d<T>>(w));
  layers.push_back(std::make_unique<ReLU<T>>());
  std::size_t in = w;
  const std::size_t widths[4] = {w, 2 * w, 4 * w, 8 * w};
  for (std::size_t stage = 0; stage < 4; ++stage) {
    for (std::size_t block = 0; block < 2; ++block) {
      const std::size_t stride = (stage > 0 && block == 0) ? 2 : 1;
      layers.push_back(std::make_unique<ResidualBlock<T>>(in, widths[stage], stride));
      in = widths[stage];
    }
  }
  layers.push_back(std::make_unique<GlobalAvgPool<T>>());
  layers.push_back(std::make_unique<Linear<T>>(in, static_cast<std::size_t>(spec.num_classes)));
  return layers;
}

}  // namespace

template <typename T>
Classifier<T> make_classifier(const ArchitectureSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
  if (spec.input.size() == 0) throw ConfigError("model input shape must be non-empty");
  if (spec.width < 0) throw ConfigError("model.width must be >= 0");
  std::vector<std::unique_ptr<Layer<T>>> layers;
  if (spec.id == "linear") {
    layers = linear_layers<T>(spec);
  } else if (spec.id == "tiny-cnn") {
    layers = tiny_cnn_layers<T>(spec);
  } else if (spec.id == "resnet18-lite" || spec.id == "resnet18") {
    layers = resnet18_layers<T>(spec);
  } else {
    throw ConfigError("unknown architecture '" + spec.id + "'");
  }
  std::mt19937_64 rng(seed);
  for (auto& l : layers) l->initialize(rng);
  return Classifier<T>(spec.id, spec.input, spec.num_classes, std::move(layers));
}

template Classifier<float> make_classifier<float>(const ArchitectureSpec&, std::uint64_t);
template Classifier<double> make_classifier<double>(const ArchitectureSpec&, std::uint64_t);

}  // namespace ddg
