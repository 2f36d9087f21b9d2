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

#include "ddg/classifier.hpp"

#include "ddg/errors.hpp"

namespace ddg {

template <typename T>
Classifier<T>::Classifier(std::string architecture, InputShape input, int num_classes,
                          std::vector<std::unique_ptr<Layer<T>>> layers)
    : architecture_(std::move(architecture)), input_(input), num_classes_(num_classes), layers_(std::move(layers)) {
  if (num_classes_ < 2) throw ValidationError("classifier needs at least 2 classes");
  std::size_t offset = 0;
  for (const auto& l : layers_) {
    param_offsets_.push_back(offset);
    offset += l->num_parameter_tensors();
  }
}

template <typename T>
Classifier<T>::Classifier(const Classifier& other)
    : architecture_(other.architecture_),
      input_(other.input_),
      num_classes_(other.num_classes_),
      param_offsets_(other.param_offsets_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

template <typename T>
Classifier<T>& Classifier<T>::operator=(const Classifier& other) {
  if (this != &other) {
    Classifier copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T>
void Classifier<T>::validate_input(const Tensor<T>& x) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != input_.channels || s[2] != input_.height || s[3] != input_.width) {
    throw ValidationError(architecture_ + " expects B x " + std::to_string(input_.channels) + " x " +
                          std::to_string(input_.height) + " x " + std::to_string(input_.width) + " input, got " +
                          shape_to_string(s));
  }
}

template <typename T>
Tensor<T> Classifier<T>::forward(const Tensor<T>& x, Mode mode, ForwardTrace<T>* trace) {
  validate_input(x);
  if (trace) trace->assign(layers_.size(), Trace<T>{});
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) h = layers_[i]->forward(h, mode, trace ? &(*trace)[i] : nullptr);
  if (h.rank() != 2 || h.dim(1) != static_cast<std::size_t>(num_classes_)) {
    throw ValidationError(architecture_ + " produced logits of shape " + shape_to_string(h.shape()));
  }
  return h;
}

template <typename T>
Tensor<T> Classifier<T>::backward(const ForwardTrace<T>& trace, const Tensor<T>& grad_logits,
                                  Gradients<T>* param_grads, bool need_input_grad) const {
  if (trace.size() != layers_.size()) throw ValidationError("backward: trace does not belong to this model");
  Tensor<T> g = grad_logits;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    std::span<Tensor<T>> grads;
    if (param_grads) grads = std::span<Tensor<T>>(*param_grads).subspan(param_offsets_[i], layers_[i]->num_parameter_tensors());
    const bool need = need_input_grad || i > 0;
    g = layers_[i]->backward(trace[i], g, grads, need);
  }
  return g;
}

template <typename T>
Tensor<T> Classifier<T>::input_gradient(const Tensor<T>& x, const Matrix& targets, Mode mode) {
  ForwardTrace<T> trace;
  const Matrix probs = softmax(to_matrix(forward(x, mode, &trace)));
  if (targets.rows() != probs.rows() || targets.cols() != probs.cols()) {
    throw ValidationError("input_gradient: targets shape does not match the logits");
  }
  // d/dz of -sum_c t_c log p_c is (sum_c t_c) p - t.
  Matrix dz(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const double mass = targets.row_sum(i);
    for (std::size_t c = 0; c < probs.cols(); ++c) dz(i, c) = mass * probs(i, c) - targets(i, c);
  }
  return backward(trace, to_tensor<T>(dz), nullptr, true);
}

template <typename T>
Tensor<T> Classifier<T>::input_gradient(const Tensor<T>& x, std::span<const int> labels, Mode mode) {
  Matrix onehot(labels.size(), static_cast<std::size_t>(num_classes_));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes_) {
      throw ValidationError("input_gradient: sample " + std::to_string(i) + " has invalid label");
    }
    onehot(i, labels[i]) = 1.0;
  }
  return input_gradient(x, onehot, mode);
}

template <typename T>
std::vector<Tensor<T>*> Classifier<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (auto& l : layers_) {
    for (auto* p : l->parameters()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> Classifier<T>::parameters() const {
  std::vector<const Tensor<T>*> out;
  for (auto* p : const_cast<Classifier*>(this)->parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Classifier<T>::named_state() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto& [name, t] : layers_[i]->named_state()) out.emplace_back(std::to_string(i) + "." + name, t);
  }
  return out;
}

template <typename T>
Gradients<T> Classifier<T>::zero_gradients() const {
  Gradients<T> g;
  for (const auto* p : parameters()) g.emplace_back(p->shape());
  return g;
}

template <typename T>
std::size_t Classifier<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

template <typename T>
Matrix to_matrix(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ValidationError("to_matrix: expected a rank-2 tensor");
  Matrix m(logits.dim(0), logits.dim(1));
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    for (std::size_t c = 0; c < logits.dim(1); ++c) m(i, c) = static_cast<double>(logits[i * logits.dim(1) + c]);
  }
  return m;
}

template <typename T>
Tensor<T> to_tensor(const Matrix& m) {
  Tensor<T> t({m.rows(), m.cols()});
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t c = 0; c < m.cols(); ++c) t[i * m.cols() + c] = static_cast<T>(m(i, c));
  }
  return t;
}

template <typename T>
Matrix predict_probabilities(Classifier<T>& model, const Tensor<T>& x, Mode mode) {
  return softmax(to_matrix(model.forward(x, mode)));
}

template class Classifier<float>;
template class Classifier<double>;
template Matrix to_matrix(const Tensor<float>&);
template Matrix to_matrix(const Tensor<double>&);
template Tensor<float> to_tensor(const Matrix&);
template Tensor<double> to_tensor(const Matrix&);
template Matrix predict_probabilities(Classifier<float>&, const Tensor<float>&, Mode);
template Matrix predict_probabilities(Classifier<double>&, const Tensor<double>&, Mode);

}  // namespace ddg
