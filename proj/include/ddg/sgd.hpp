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

#include <vector>

#include "ddg/classifier.hpp"

namespace ddg {

/// SGD with heavy-ball momentum and coupled (L2) weight decay:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - learning_rate * v
template <typename T>
struct OptimizerState {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<Tensor<T>> velocity;

  static OptimizerState for_model(const Classifier<T>& model, double learning_rate, double momentum,
                                  double weight_decay);
};

template <typename T>
void sgd_step(Classifier<T>& model, const Gradients<T>& grads, OptimizerState<T>& state);

extern template struct OptimizerState<float>;
extern template struct OptimizerState<double>;
extern template void sgd_step(Classifier<float>&, const Gradients<float>&, OptimizerState<float>&);
extern template void sgd_step(Classifier<double>&, const Gradients<double>&, OptimizerState<double>&);

}  // namespace ddg
