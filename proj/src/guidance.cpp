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

#include "ddg/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ddg/errors.hpp"

namespace ddg {
namespace {

constexpr double kRowSumTolerance = 1e-6;

void check_labels(std::span<const int> labels, std::size_t num_classes) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ValidationError("sample " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

void check_probabilities(const Matrix& probs, std::span<const int> labels, const char* what) {
  if (probs.rows() != labels.size()) {
    throw ValidationError(std::string(what) + ": " + std::to_string(probs.rows()) + " rows but " +
                          std::to_string(labels.size()) + " labels");
  }
  check_labels(labels, probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const double s = probs.row_sum(i);
    if (!(std::abs(s - 1.0) <= kRowSumTolerance)) {
      throw ValidationError(std::string(what) + ": row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
  }
}

int argmax(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows_ * cols_) throw ValidationError("matrix value count does not match its shape");
}

double Matrix::row_sum(std::size_t r) const {
  const auto rr = row(r);
  return std::accumulate(rr.begin(), rr.end(), 0.0);
}

void GuidanceConfig::validate() const {
  if (!(xi_base >= 0.0 && xi_base <= 1.0)) throw ConfigError("guidance.xi_base must lie in [0, 1]");
  if (!(kappa >= 0.0)) throw ConfigError("guidance.kappa must be >= 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("guidance.gamma must lie in (0, 1]");
  if (!(lambda_w >= 0.0)) throw ConfigError("guidance.lambda_w must be >= 0");
  if (!(alpha_w >= 0.0)) throw ConfigError("guidance.alpha_w must be >= 0");
  if (tau1 < 1) throw ConfigError("guidance.tau1 must be >= 1");
  if (num_classes < 2) throw ConfigError("guidance.num_classes must be >= 2");
}

void GuidanceConfig::validate_for_batch(std::size_t batch_size) const {
  validate();
  if (static_cast<std::size_t>(tau1) >= batch_size) {
    throw ConfigError("guidance.tau1 (" + std::to_string(tau1) + ") must be smaller than the batch size (" +
                      std::to_string(batch_size) + ")");
  }
}

BudgetVector BudgetVector::from_values(std::vector<double> xi) {
  BudgetVector out;
  out.xi = std::move(xi);
  if (!out.xi.empty()) {
    const auto [lo, hi] = std::minmax_element(out.xi.begin(), out.xi.end());
    out.xi_min = *lo;
    out.xi_max = *hi;
  }
  return out;
}

BudgetVector BudgetVector::uniform(std::size_t n, double xi) { return from_values(std::vector<double>(n, xi)); }

Matrix softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto z = logits.row(i);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) s += (out(i, c) = std::exp(z[c] - m));
    for (std::size_t c = 0; c < z.size(); ++c) out(i, c) /= s;
  }
  return out;
}

Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs) {
  check_same_shape(probs, d_probs, "softmax_backward");
  Matrix out(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t c = 0; c < probs.cols(); ++c) dot += probs(i, c) * d_probs(i, c);
    for (std::size_t c = 0; c < probs.cols(); ++c) out(i, c) = probs(i, c) * (d_probs(i, c) - dot);
  }
  return out;
}

SupervisionMatrix relax_labels(std::span<const int> labels, double gamma, int num_classes) {
  if (num_classes < 2) throw ValidationError("relax_labels: need at least 2 classes");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("relax_labels: gamma must lie in (0, 1]");
  check_labels(labels, static_cast<std::size_t>(num_classes));
  const double floor = (1.0 - gamma) / num_classes;
  SupervisionMatrix out(labels.size(), static_cast<std::size_t>(num_classes), floor);
  for (std::size_t i = 0; i < labels.size(); ++i) out(i, labels[i]) = gamma + floor;
  return out;
}

ConfidenceRank rank_confidence(const Matrix& probs, std::span<const int> labels) {
  check_probabilities(probs, labels, "rank_confidence");
  const std::size_t n = labels.size();
  ConfidenceRank out;
  out.confidences.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.confidences[i] = probs(i, labels[i]);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.confidences[a] < out.confidences[b]; });
  out.ranks.resize(n);
  for (std::size_t pos = 0; pos < n; ++pos) out.ranks[order[pos]] = static_cast<int>(pos) + 1;
  return out;
}

BudgetVector allocate_budgets(const ConfidenceRank& ranks, const GuidanceConfig& cfg, std::size_t batch_size) {
  if (batch_size < 2) throw ConfigError("allocate_budgets: batch size must be >= 2");
  cfg.validate_for_batch(batch_size);
  if (ranks.ranks.size() != batch_size) {
    throw ValidationError("allocate_budgets: " + std::to_string(ranks.ranks.size()) + " ranks for batch of " +
                          std::to_string(batch_size));
  }
  const double tau1 = cfg.tau1;
  const double tau2 = static_cast<double>(batch_size) - tau1;
  std::vector<double> xi(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const double r = ranks.ranks[i];
    xi[i] = cfg.xi_base + cfg.kappa * (std::tanh(r - tau1) - std::tanh(tau2 - r));
  }
  return BudgetVector::from_values(std::move(xi));
}

PredictionState prediction_state(const Matrix& probs, std::span<const int> labels) {
  if (probs.rows() != labels.size()) throw ValidationError("prediction_state: row/label count mismatch");
  PredictionState st;
  st.predicted.resize(labels.size());
  st.misclassified.resize(labels.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    st.predicted[i] = argmax(probs.row(i));
    st.misclassified[i] = st.predicted[i] != labels[i];
    correct += st.misclassified[i] ? 0 : 1;
  }
  st.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  return st;
}

int most_probable_incorrect(std::span<const double> probs, int label) {
  int best = -1;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    if (static_cast<int>(c) == label) continue;
    if (best < 0 || probs[c] > probs[best]) best = static_cast<int>(c);
  }
  return best;
}

SupervisionMatrix adjust_supervision(const SupervisionMatrix& relaxed, std::span<const int> labels,
                                     const Matrix& adv_probs, const GuidanceConfig& cfg, double pos_scale,
                                     double neg_scale) {
  check_probabilities(adv_probs, labels, "adjust_supervision");
  return adjust_supervision(relaxed, labels, adv_probs, prediction_state(adv_probs, labels), cfg, pos_scale,
                            neg_scale);
}

SupervisionMatrix adjust_supervision(const SupervisionMatrix& relaxed, std::span<const int> labels,
                                     const Matrix& adv_probs, const PredictionState& state,
                                     const GuidanceConfig& cfg, double pos_scale, double neg_scale) {
  check_same_shape(relaxed, adv_probs, "adjust_supervision");
  if (relaxed.rows() != labels.size() || state.misclassified.size() != labels.size()) {
    throw ValidationError("adjust_supervision: batch size mismatch");
  }
  if (!(pos_scale >= 0.0) || !(neg_scale >= 0.0)) {
    throw ValidationError("adjust_supervision: pos_scale and neg_scale must be >= 0");
  }
  const double num_classes = static_cast<double>(relaxed.cols());
  const double positive = pos_scale * cfg.gamma * (1.0 - state.accuracy);
  const double negative = neg_scale / num_classes;

  SupervisionMatrix out = relaxed;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!state.misclassified[i]) continue;
    out(i, labels[i]) += positive;
    out(i, most_probable_incorrect(adv_probs.row(i), labels[i])) -= negative;
  }
  return out;
}

std::vector<double> smoothness_weights(const BudgetVector& budgets, const std::vector<bool>& misclassified,
                                       const GuidanceConfig& cfg) {
  if (budgets.size() != misclassified.size()) {
    throw ValidationError("smoothness_weights: budget and misclassification lengths differ");
  }
  const double span = budgets.xi_max - budgets.xi_min;
  std::vector<double> w(budgets.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double balance = span > 0.0 ? (budgets.xi_max - budgets.xi[i]) / span : 0.0;
    w[i] = cfg.lambda_w * balance + (misclassified[i] ? cfg.alpha_w : 0.0) + 1.0;
  }
  return w;
}

namespace {

void check_loss_inputs(const Matrix& adv_probs, const Matrix& init_probs, const SupervisionMatrix& targets,
                       std::span<const double> weights) {
  check_same_shape(adv_probs, init_probs, "total_loss");
  check_same_shape(adv_probs, targets, "total_loss");
  if (weights.size() != adv_probs.rows()) {
    throw ValidationError("total_loss: " + std::to_string(weights.size()) + " weights for " +
                          std::to_string(adv_probs.rows()) + " samples");
  }
  if (adv_probs.rows() == 0) throw ValidationError("total_loss: empty batch");
}

double row_distance(const Matrix& a, const Matrix& b, std::size_t i) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    const double d = a(i, c) - b(i, c);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

LossTerms total_loss(const Matrix& adv_probs, const Matrix& init_probs, const SupervisionMatrix& targets,
                     std::span<const double> weights) {
  check_loss_inputs(adv_probs, init_probs, targets, weights);
  const double batch = static_cast<double>(adv_probs.rows());
  LossTerms out;
  for (std::size_t i = 0; i < adv_probs.rows(); ++i) {
    for (std::size_t c = 0; c < adv_probs.cols(); ++c) {
      out.cross_entropy -= targets(i, c) * std::log(std::max(adv_probs(i, c), kProbabilityFloor));
    }
    if (weights[i] != 0.0) out.smoothness += weights[i] * row_distance(init_probs, adv_probs, i);
  }
  out.cross_entropy /= batch;
  out.smoothness /= batch;
  return out;
}

LossGradient total_loss_gradient(const Matrix& adv_probs, const Matrix& init_probs,
                                 const SupervisionMatrix& targets, std::span<const double> weights) {
  check_loss_inputs(adv_probs, init_probs, targets, weights);
  const double batch = static_cast<double>(adv_probs.rows());
  LossGradient g{Matrix(adv_probs.rows(), adv_probs.cols()), Matrix(adv_probs.rows(), adv_probs.cols())};
  for (std::size_t i = 0; i < adv_probs.rows(); ++i) {
    for (std::size_t c = 0; c < adv_probs.cols(); ++c) {
      const double p = adv_probs(i, c);
      g.d_adv_probs(i, c) = p > kProbabilityFloor ? -targets(i, c) / (p * batch) : 0.0;
    }
    if (weights[i] == 0.0) continue;
    const double dist = row_distance(init_probs, adv_probs, i);
    if (dist == 0.0) continue;
    const double scale = weights[i] / (batch * dist);
    for (std::size_t c = 0; c < adv_probs.cols(); ++c) {
      const double d = (init_probs(i, c) - adv_probs(i, c)) * scale;
      g.d_init_probs(i, c) += d;
      g.d_adv_probs(i, c) -= d;
    }
  }
  return g;
}

}  // namespace ddg
