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

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ddg/guidance.hpp"
#include "ddg/layers.hpp"
#include "ddg/tensor.hpp"

namespace ddg {

struct InputShape {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const InputShape&) const = default;
};

template <typename T>
using ForwardTrace = std::vector<Trace<T>>;

/// Gradient buffers aligned with Classifier::parameters().
template <typename T>
using Gradients = std::vector<Tensor<T>>;

/// A sequential stack of layers mapping B x C x H x W images in [0,1] to
/// B x L logits, with explicit forward traces and reverse-mode gradients.
template <typename T>
class Classifier {
 public:
  Classifier(std::string architecture, InputShape input, int num_classes,
             std::vector<std::unique_ptr<Layer<T>>> layers);
  Classifier(const Classifier& other);
  Classifier& operator=(const Classifier& other);
  Classifier(Classifier&&) noexcept = default;
  Classifier& operator=(Classifier&&) noexcept = default;

  const std::string& architecture() const { return architecture_; }
  InputShape input_shape() const { return input_; }
  int num_classes() const { return num_classes_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode = Mode::kEval, ForwardTrace<T>* trace = nullptr);

  /// Back-propagates dL/dlogits through a trace. Parameter gradients are
  /// accumulated into `param_grads` when it is non-null.
  Tensor<T> backward(const ForwardTrace<T>& trace, const Tensor<T>& grad_logits, Gradients<T>* param_grads,
                     bool need_input_grad) const;

  /// Gradient of sum_i CE(softmax(f(x_i)), targets_i) with respect to x.
  Tensor<T> input_gradient(const Tensor<T>& x, const Matrix& targets, Mode mode = Mode::kEval);
  Tensor<T> input_gradient(const Tensor<T>& x, std::span<const int> labels, Mode mode = Mode::kEval);

  std::vector<Tensor<T>*> parameters();
  std::vector<const Tensor<T>*> parameters() const;
  /// Parameters and buffers keyed "<layer>.<name>".
  std::vector<std::pair<std::string, Tensor<T>*>> named_state();
  Gradients<T> zero_gradients() const;
  std::size_t parameter_count() const;
  std::size_t num_layers() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }

 private:
  void validate_input(const Tensor<T>& x) const;

  std::string architecture_;
  InputShape input_;
  int num_classes_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<std::size_t> param_offsets_;
};

template <typename T>
Matrix to_matrix(const Tensor<T>& logits);
template <typename T>
Tensor<T> to_tensor(const Matrix& m);

/// Softmax probabilities of the model outputs, in double precision.
template <typename T>
Matrix predict_probabilities(Classifier<T>& model, const Tensor<T>& x, Mode mode = Mode::kEval);

extern template class Classifier<float>;
extern template class Classifier<double>;

}  // namespace ddg
