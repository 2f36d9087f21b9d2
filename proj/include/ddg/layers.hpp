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
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ddg/tensor.hpp"

namespace ddg {

/// kTrainFrozenStats normalizes with batch statistics but leaves running
/// statistics untouched; attack passes during training use it.
enum class Mode { kEval, kTrainFrozenStats, kTrain };

/// Whatever a layer needs to replay its backward pass. Traces are immutable
/// after forward, so one trace can be back-propagated several times.
template <typename T>
struct Trace {
  std::vector<Tensor<T>> saved;
  std::vector<Trace<T>> children;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode, Trace<T>* trace) = 0;
  /// Returns dL/dx (empty when `need_input_grad` is false) and accumulates
  /// parameter gradients into `param_grads`, which is either empty (skip) or
  /// aligned with parameters().
  virtual Tensor<T> backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>> param_grads,
                             bool need_input_grad) const = 0;

  virtual std::vector<Tensor<T>*> parameters() { return {}; }
  /// Length of parameters().
  virtual std::size_t num_parameter_tensors() const { return 0; }
  /// Parameters followed by non-trainable buffers, with local names.
  virtual std::vector<std::pair<std::string, Tensor<T>*>> named_state() { return {}; }
  virtual void initialize(std::mt19937_64& /*rng*/) {}
  virtual std::unique_ptr<Layer<T>> clone() const = 0;
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, bool bias);

  std::string kind() const override { return "conv2d"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Trace<T>* trace) override;
  Tensor<T> backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>> param_grads,
                     bool need_input_grad) const override;
  std::vector<Tensor<T>*> parameters() override;
  std::size_t num_parameter_tensors() const override { return has_bias_ ? 2 : 1; }
  std::vector<std::pair<std::string, Tensor<T>*>> named_state() override;
  void initialize(std::mt19937_64& rng) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  std::size_t in_channels_, out_channels_, kernel_, stride_, padding_;
  bool has_bias_;
  Tensor<T> weight_;  // out x in x k x k
  Tensor<T> bias_;    // out
};

template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(std::size_t in_features, std::size_t out_features);

  std::string kind() const override { return "linear"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Trace<T>* trace) override;
  Tensor<T> backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>> param_grads,
                     bool need_input_grad) const override;
  std::vector<Tensor<T>*> parameters() override { return {&weight_, &bias_}; }
  std::size_t num_parameter_tensors() const override { return 2; }
  std::vector<std::pair<std::string, Tensor<T>*>> named_state() override {
    return {{"weight", &weight_}, {"bias", &bias_}};
  }
  void initialize(std::mt19937_64& rng) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Linear>(*this); }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  std::size_t in_features_, out_features_;
  Tensor<T> weight_;  // out x in
  Tensor<T> bias_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Trace<T>* trace) override;
  Tensor<T> backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>> param_grads,
                     bool need_input_grad) const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReLU>(*this); }
};

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  std::string kind() const override { return "maxpool2d"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Trace<T>* trace) override;
  Tensor<T> backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>> param_grads,
                     bool need_input_grad) const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2d>(*this); }
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Trace<T>* trace) override;
  Tensor<T> backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>> param_grads,
                     bool need_input_grad) const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
};

template <typename T>
class Flatten final : public Layer<T> {
 public:
  std::string kind() const override { return "flatten"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Trace<T>* trace) override;
  Tensor<T> backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>> param_grads,
                     bool need_input_grad) const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Flatten>(*this); }
};

template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  explicit BatchNorm2d(std::size_t channels, double momentum = 0.1, double eps = 1e-5);

  std::string kind() const override { return "batchnorm2d"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Trace<T>* trace) override;
  Tensor<T> backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>> param_grads,
                     bool need_input_grad) const override;
  std::vector<Tensor<T>*> parameters() override { return {&gamma_, &beta_}; }
  std::size_t num_parameter_tensors() const override { return 2; }
  std::vector<std::pair<std::string, Tensor<T>*>> named_state() override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm2d>(*this); }

  const Tensor<T>& running_mean() const { return running_mean_; }
  const Tensor<T>& running_var() const { return running_var_; }

 private:
  std::size_t channels_;
  double momentum_, eps_;
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
};

/// conv-bn-relu-conv-bn plus identity or 1x1-conv-bn shortcut, then relu.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride);
  ResidualBlock(const ResidualBlock& other);

  std::string kind() const override { return "residual_block"; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Trace<T>* trace) override;
  Tensor<T> backward(const Trace<T>& trace, const Tensor<T>& grad_out, std::span<Tensor<T>> param_grads,
                     bool need_input_grad) const override;
  std::vector<Tensor<T>*> parameters() override;
  std::size_t num_parameter_tensors() const override;
  std::vector<std::pair<std::string, Tensor<T>*>> named_state() override;
  void initialize(std::mt19937_64& rng) override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ResidualBlock>(*this); }

 private:
  std::vector<std::unique_ptr<Layer<T>>> main_;      // conv, bn, relu, conv, bn
  std::vector<std::unique_ptr<Layer<T>>> shortcut_;  // empty or conv, bn
};

#define DDG_EXTERN_LAYERS(T)                \
  extern template class Conv2d<T>;          \
  extern template class Linear<T>;          \
  extern template class ReLU<T>;            \
  extern template class MaxPool2d<T>;       \
  extern template class GlobalAvgPool<T>;   \
  extern template class Flatten<T>;         \
  extern template class BatchNorm2d<T>;     \
  extern template class ResidualBlock<T>;
DDG_EXTERN_LAYERS(float)
DDG_EXTERN_LAYERS(double)
#undef DDG_EXTERN_LAYERS

}  // namespace ddg
