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

#include <cstdint>
#include <string>
#include <vector>

#include "ddg/classifier.hpp"

namespace ddg {

struct ArchitectureSpec {
  std::string id = "tiny-cnn";  ///< linear | tiny-cnn | resnet18-lite | resnet18
  InputShape input{};
  int num_classes = 10;
  int width = 0;  ///< base channel count; 0 picks the architecture default

  int resolved_width() const;
};

const std::vector<std::string>& known_architectures();

/// Builds and initializes a classifier. Initialization is a function of `seed` only.
template <typename T>
Classifier<T> make_classifier(const ArchitectureSpec& spec, std::uint64_t seed);

extern template Classifier<float> make_classifier<float>(const ArchitectureSpec&, std::uint64_t);
extern template Classifier<double> make_classifier<double>(const ArchitectureSpec&, std::uint64_t);

}  // namespace ddg
