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

// Per-sample guidance math: perturbation budgets from confidence ranks,
// relaxed and state-dependent supervision targets, and the weighted
// smoothness objective. Everything here is a pure function of its inputs.

#include <cstddef>
#include <span>
#include <vector>

namespace ddg {

/// Row-major matrix of doubles, used for B x L probability and target tables.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> values() const { return data_; }
  double row_sum(std::size_t r) const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct GuidanceConfig {
  double xi_base = 8.0 / 255.0;  ///< l-inf radius on the [0,1] pixel scale
  double kappa = 2.0 / 255.0;    ///< amplitude of the rank-driven budget swing
  int tau1 = 8;                  ///< lower transition rank; the upper one is B - tau1
  double gamma = 0.9;            ///< label relaxation strength, 1 disables relaxation
  double lambda_w = 1.33;        ///< budget-balance weight in the smoothness term
  double alpha_w = 1.5;          ///< extra smoothness weight on misclassified samples
  int num_classes = 10;

  /// Checks every batch-independent invariant; throws ConfigError.
  void validate() const;
  /// Also checks 1 <= tau1 < batch_size.
  void validate_for_batch(std::size_t batch_size) const;
};

/// Probability of the true class per sample and its ascending rank (1 = least confident).
struct ConfidenceRank {
  std::vector<double> confidences;
  std::vector<int> ranks;
};

struct BudgetVector {
  std::vector<double> xi;
  double xi_max = 0.0;
  double xi_min = 0.0;

  static BudgetVector from_values(std::vector<double> xi);
  static BudgetVector uniform(std::size_t n, double xi);
  std::size_t size() const { return xi.size(); }
};

using SupervisionMatrix = Matrix;

/// Argmax, batch accuracy and misclassification mask of one set of predictions.
struct PredictionState {
  std::vector<int> predicted;
  std::vector<bool> misclassified;
  double accuracy = 0.0;
};

/// Row-wise softmax with max subtraction.
Matrix softmax(const Matrix& logits);
/// Chain rule through softmax: returns dL/dlogits given probabilities and dL/dprobs.
Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs);

/// y_hat = gamma * onehot(y) + (1 - gamma) / L.
SupervisionMatrix relax_labels(std::span<const int> labels, double gamma, int num_classes);

ConfidenceRank rank_confidence(const Matrix& probs, std::span<const int> labels);

/// xi_i = xi_base + kappa * [tanh(r_i - tau1) - tanh(tau2 - r_i)], tau2 = B - tau1.
BudgetVector allocate_budgets(const ConfidenceRank& ranks, const GuidanceConfig& cfg, std::size_t batch_size);

PredictionState prediction_state(const Matrix& probs, std::span<const int> labels);

/// Highest-probability class other than `label`; ties go to the lower index.
int most_probable_incorrect(std::span<const double> probs, int label);

SupervisionMatrix adjust_supervision(const SupervisionMatrix& relaxed, std::span<const int> labels,
                                     const Matrix& adv_probs, const GuidanceConfig& cfg,
                                     double pos_scale = 1.0, double neg_scale = 1.0);
/// Same as above with the prediction state supplied by the caller, so the
/// accuracy used here is the one the caller logs.
SupervisionMatrix adjust_supervision(const SupervisionMatrix& relaxed, std::span<const int> labels,
                                     const Matrix& adv_probs, const PredictionState& state,
                                     const GuidanceConfig& cfg, double pos_scale = 1.0,
                                     double neg_scale = 1.0);

/// w_i = lambda * (xi_max - xi_i) / (xi_max - xi_min) + alpha * [misclassified_i] + 1.
/// The budget fraction is 0 when all budgets are equal.
std::vector<double> smoothness_weights(const BudgetVector& budgets, const std::vector<bool>& misclassified,
                                       const GuidanceConfig& cfg);

struct LossTerms {
  double cross_entropy = 0.0;
  double smoothness = 0.0;
  double total() const { return cross_entropy + smoothness; }
};

inline constexpr double kProbabilityFloor = 1e-12;

/// -(1/B) sum_i sum_c t_ic log p_ic  +  (1/B) sum_i w_i ||init_i - adv_i||_2.
LossTerms total_loss(const Matrix& adv_probs, const Matrix& init_probs, const SupervisionMatrix& targets,
                     std::span<const double> weights);

struct LossGradient {
  Matrix d_adv_probs;
  Matrix d_init_probs;
};

/// Analytic gradient of total_loss. The norm's gradient is taken as 0 where
/// the two prediction rows coincide, and clamped probabilities get 0.
LossGradient total_loss_gradient(const Matrix& adv_probs, const Matrix& init_probs,
                                 const SupervisionMatrix& targets, std::span<const double> weights);

}  // namespace ddg
