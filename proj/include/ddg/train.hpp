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
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ddg/attacks.hpp"
#include "ddg/classifier.hpp"
#include "ddg/data.hpp"
#include "ddg/guidance.hpp"
#include "ddg/sgd.hpp"

namespace ddg {

/// ddg: guided training. fgsm_rs: random-start single-step with hard labels.
/// uniform_guidance: inherited perturbations and relaxed labels, no per-sample guidance.
enum class TrainerKind { kDdg, kFgsmRs, kUniformGuidance };
TrainerKind parse_trainer(const std::string& name);
std::string to_string(TrainerKind kind);

struct TrainPlan {
  TrainerKind trainer = TrainerKind::kDdg;
  int epochs = 110;
  std::size_t batch_size = 128;
  double learning_rate = 0.1;
  std::vector<int> milestones{100, 105};
  double lr_decay = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool augment = true;
  bool disable_pba = false;  ///< uniform budgets instead of rank-driven ones
  bool disable_ssa = false;  ///< relaxed labels without the state-dependent adjustment
  bool disable_gs = false;   ///< drop the smoothness term
  double pos_scale = 1.0;
  double neg_scale = 1.0;
  double fgsm_rs_step_scale = 1.0;  ///< fgsm_rs step as a multiple of the budget

  void validate() const;
  /// Epochs are 1-based; each milestone m decays the rate for epochs > m.
  double learning_rate_at(int epoch) const;
};

/// Rules that tie the plan to the guidance settings: with rank-driven
/// budgets, tau1 < batch size and xi_base >= 2 * kappa.
void check_plan_guidance(const TrainPlan& plan, const GuidanceConfig& guidance);

class NanLossError : public std::runtime_error {
 public:
  NanLossError(int epoch, std::size_t batch, double cross_entropy, double smoothness);
  int epoch;
  std::size_t batch;
  double cross_entropy;
  double smoothness;
};

/// One initial perturbation per training example, inherited across epochs.
/// Reads are clipped to the budget recorded with the last write.
class PerturbationStore {
 public:
  PerturbationStore() = default;
  /// Draws every entry from U(-xi_base, xi_base).
  PerturbationStore(const std::vector<std::int64_t>& ids, std::size_t sample_size, double xi_base,
                    std::uint64_t seed);

  std::size_t size() const { return bounds_.size(); }
  std::size_t sample_size() const { return sample_size_; }
  bool contains(std::int64_t id) const { return slot_.count(id) > 0; }
  std::size_t slot(std::int64_t id) const;
  double bound(std::int64_t id) const { return bounds_[slot(id)]; }
  /// Entries written at least once since construction.
  std::size_t written() const { return written_count_; }
  /// Raw stored perturbation of one example.
  std::span<const float> entry(std::int64_t id) const { return {values_.data() + slot(id) * sample_size_, sample_size_}; }

  /// B x C x H x W initial perturbations for the given ids.
  Tensor<float> read(std::span<const std::int64_t> ids, const Shape& sample_shape) const;
  void write(std::span<const std::int64_t> ids, const Tensor<float>& deltas, std::span<const double> bounds);

 private:
  std::size_t sample_size_ = 0;
  std::unordered_map<std::int64_t, std::size_t> slot_;
  std::vector<float> values_;
  std::vector<double> bounds_;
  std::vector<bool> written_;
  std::size_t written_count_ = 0;
};

/// Per-batch override points used by the ablation lab.
class BatchHook {
 public:
  virtual ~BatchHook() = default;
  /// Confidences of the initial-perturbation pass, before budgets are set.
  virtual void on_confidences(std::span<const double> /*confidences*/) {}
  virtual void adjust_budgets(BudgetVector& /*budgets*/) {}
  virtual void adjust_targets(SupervisionMatrix& /*targets*/, std::span<const int> /*labels*/,
                              const Matrix& /*adv_probs*/) {}
};

struct BatchRecord {
  int epoch = 0;
  std::size_t index = 0;
  std::size_t size = 0;
  double accuracy = 0.0;  ///< on the training adversarial inputs; the value fed to the supervision update
  LossTerms loss;
  double max_abs_delta = 0.0;
  std::vector<double> budgets;
};

struct MetricsRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double train_cross_entropy = 0.0;
  double train_smoothness = 0.0;
  double train_accuracy = 0.0;
  double clean_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<std::string, double>> robust;
  bool co_flag = false;
  double wallclock_seconds = 0.0;

  std::optional<double> robust_accuracy(const std::string& attack) const;
  /// Everything except wallclock, so reruns serialize identically.
  nlohmann::json to_json() const;
  static MetricsRecord from_json(const nlohmann::json& j);
};

/// Epoch e is flagged when the best earlier accuracy is at least 0.20 and
/// the accuracy at e is below half of it.
std::vector<bool> detect_co(std::span<const double> robust_accuracy);

struct TrainOptions {
  std::uint64_t seed = 0;
  std::vector<AttackSpec> eval_attacks;  ///< pgd10 is added when missing
  std::size_t eval_limit = 0;
  std::size_t eval_batch_size = 256;
  BatchHook* hook = nullptr;
  std::function<void(const BatchRecord&)> on_batch;
  std::function<void(const MetricsRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<MetricsRecord> history;
  Classifier<float> best;
  int best_epoch = 0;
  Classifier<float> final_model;
};

/// The gradient path shared by every trainer: cross-entropy on the
/// adversarial pass plus the weighted smoothness term, back-propagated into
/// `grads` through both passes. Returns the loss terms.
template <typename T>
LossTerms guided_loss_backward(const Classifier<T>& model, const ForwardTrace<T>& adv_trace, const Matrix& adv_logits,
                               const ForwardTrace<T>& init_trace, const Matrix& init_logits,
                               const SupervisionMatrix& targets, std::span<const double> weights, Gradients<T>& grads);

class Trainer {
 public:
  Trainer(Classifier<float>& model, const IndexedDataset& train, const IndexedDataset& holdout, TrainPlan plan,
          GuidanceConfig guidance, TrainOptions options);

  /// One optimizer step on one batch. `grads_out` receives the gradients applied.
  BatchRecord train_batch(const Batch& batch, int epoch, std::size_t index, Gradients<float>* grads_out = nullptr);
  MetricsRecord run_epoch(int epoch);
  TrainResult run();

  PerturbationStore& store() { return store_; }
  OptimizerState<float>& optimizer() { return optimizer_; }
  const TrainPlan& plan() const { return plan_; }

 private:
  Classifier<float>& model_;
  const IndexedDataset& train_;
  const IndexedDataset& holdout_;
  TrainPlan plan_;
  GuidanceConfig guidance_;
  TrainOptions options_;
  OptimizerState<float> optimizer_;
  PerturbationStore store_;
  std::vector<double> pgd_history_;
  std::mt19937_64 noise_rng_;
};

TrainResult train_ddg(Classifier<float>& model, const IndexedDataset& train, const IndexedDataset& holdout,
                      const TrainPlan& plan, const GuidanceConfig& guidance, const TrainOptions& options);
/// fgsm_rs or uniform_guidance, chosen by plan.trainer.
TrainResult train_baseline(Classifier<float>& model, const IndexedDataset& train, const IndexedDataset& holdout,
                           const TrainPlan& plan, const GuidanceConfig& guidance, const TrainOptions& options);

}  // namespace ddg
