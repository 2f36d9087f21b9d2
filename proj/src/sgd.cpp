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

#include "ddg/sgd.hpp"

#include "ddg/errors.hpp"

namespace ddg {

template <typename T>
OptimizerState<T> OptimizerState<T>::for_model(const Classifier<T>& model, double learning_rate, double momentum,
                                               double weight_decay) {
  OptimizerState s;
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  s.velocity = model.zero_gradients();
  return s;
}

template <typename T>
void sgd_step(Classifier<T>& model, const Gradients<T>& grads, OptimizerState<T>& state) {
  auto params = model.parameters();
  if (grads.size() != params.size()) {
    throw ValidationError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                          std::to_string(params.size()) + " parameters");
  }
  if (state.velocity.empty()) state.velocity = model.zero_gradients();
  if (state.velocity.size() != params.size()) throw ValidationError("sgd_step: velocity buffers do not match");

  const T lr = static_cast<T>(state.learning_rate);
  const T momentum = static_cast<T>(state.momentum);
  const T decay = static_cast<T>(state.weight_decay);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    Tensor<T>& v = state.velocity[k];
    if (grads[k].shape() != p.shape() || v.shape() != p.shape()) {
      throw ValidationError("sgd_step: shape mismatch for parameter " + std::to_string(k) + " " +
                            shape_to_string(p.shape()) + " vs gradient " + shape_to_string(grads[k].shape()));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + grads[k][i] + decay * p[i];
      p[i] -= lr * v[i];
    }
  }
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void sgd_step(Classifier<float>&, const Gradients<float>&, OptimizerState<float>&);
template void sgd_step(Classifier<double>&, const Gradients<double>&, OptimizerState<double>&);

}  // namespace ddg
