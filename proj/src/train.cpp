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

#include "ddg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "ddg/errors.hpp"
#include "ddg/random.hpp"

namespace ddg {

TrainerKind parse_trainer(const std::string& name) {
  if (name == "ddg") return TrainerKind::kDdg;
  if (name == "fgsm_rs") return TrainerKind::kFgsmRs;
  if (name == "uniform_guidance") return TrainerKind::kUniformGuidance;
  throw ConfigError("unknown trainer '" + name + "' (expected ddg, fgsm_rs or uniform_guidance)");
}

std::string to_string(TrainerKind kind) {
  switch (kind) {
    case TrainerKind::kDdg: return "ddg";
    case TrainerKind::kFgsmRs: return "fgsm_rs";
    case TrainerKind::kUniformGuidance: return "uniform_guidance";
  }
  return "unknown";
}

void TrainPlan::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train.lr_decay must lie in (0, 1]");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
  for (std::size_t k = 0; k < milestones.size(); ++k) {
    if (milestones[k] < 1 || milestones[k] >= epochs) {
      throw ConfigError("train.milestones must lie in [1, train.epochs); got " + std::to_string(milestones[k]));
    }
    if (k > 0 && milestones[k] <= milestones[k - 1]) throw ConfigError("train.milestones must be strictly increasing");
  }
  if (!(pos_scale >= 0.0) || !(neg_scale >= 0.0)) throw ConfigError("train.pos_scale and train.neg_scale must be non-negative");
  if (!(fgsm_rs_step_scale > 0.0)) throw ConfigError("train.fgsm_rs_step_scale must be positive");
}

void check_plan_guidance(const TrainPlan& plan, const GuidanceConfig& guidance) {
  if (plan.trainer != TrainerKind::kDdg || plan.disable_pba) return;
  guidance.validate_for_batch(plan.batch_size);
  if (guidance.xi_base < 2.0 * guidance.kappa) {
    throw ConfigError("guidance.xi_base must be at least 2 * guidance.kappa so every budget stays non-negative");
  }
}

double TrainPlan::learning_rate_at(int epoch) const {
  double lr = learning_rate;
  for (int m : milestones) {
    if (epoch > m) lr *= lr_decay;
  }
  return lr;
}

namespace {

std::string nan_message(int epoch, std::size_t batch, double ce, double smo) {
  std::ostringstream os;
  os << "non-finite loss at epoch " << epoch << ", batch " << batch << " (cross-entropy " << ce << ", smoothness "
     << smo << ")";
  return os.str();
}

}  // namespace

NanLossError::NanLossError(int e, std::size_t b, double ce, double smo)
    : std::runtime_error(nan_message(e, b, ce, smo)), epoch(e), batch(b), cross_entropy(ce), smoothness(smo) {}

PerturbationStore::PerturbationStore(const std::vector<std::int64_t>& ids, std::size_t sample_size, double xi_base,
                                     std::uint64_t seed)
    : sample_size_(sample_size),
      values_(ids.size() * sample_size),
      bounds_(ids.size(), xi_base),
      written_(ids.size(), false) {
  for (std::size_t s = 0; s < ids.size(); ++s) {
    if (!slot_.emplace(ids[s], s).second) {
      throw ValidationError("perturbation store: duplicate example id " + std::to_string(ids[s]));
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-xi_base, xi_base);
  for (auto& v : values_) v = static_cast<float>(u(rng));
}

std::size_t PerturbationStore::slot(std::int64_t id) const {
  auto it = slot_.find(id);
  if (it == slot_.end()) throw ValidationError("perturbation store has no entry for example " + std::to_string(id));
  return it->second;
}

Tensor<float> PerturbationStore::read(std::span<const std::int64_t> ids, const Shape& sample_shape) const {
  Shape shape{ids.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Tensor<float> out(shape);
  if (out.stride0() != sample_size_ && !ids.empty()) {
    throw ValidationError("perturbation store: sample shape " + shape_to_string(sample_shape) + " does not match");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::size_t s = slot(ids[i]);
    const float bound = floor_to<float>(bounds_[s]);
    for (std::size_t k = 0; k < sample_size_; ++k) {
      out[i * sample_size_ + k] = std::clamp(values_[s * sample_size_ + k], -bound, bound);
    }
  }
  return out;
}

void PerturbationStore::write(std::span<const std::int64_t> ids, const Tensor<float>& deltas,
                              std::span<const double> bounds) {
  if (deltas.size() != ids.size() * sample_size_ || bounds.size() != ids.size()) {
    throw ValidationError("perturbation store: write sizes do not match");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::size_t s = slot(ids[i]);
    std::copy_n(deltas.data() + i * sample_size_, sample_size_, values_.data() + s * sample_size_);
    bounds_[s] = bounds[i];
    if (!written_[s]) {
      written_[s] = true;
      ++written_count_;
    }
  }
}

std::optional<double> MetricsRecord::robust_accuracy(const std::string& attack) const {
  for (const auto& [n, a] : robust) {
    if (n == attack) return a;
  }
  return std::nullopt;
}

nlohmann::json MetricsRecord::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["lr"] = learning_rate;
  j["train_loss"] = train_loss;
  j["train_ce"] = train_cross_entropy;
  j["train_smoothness"] = train_smoothness;
  j["train_acc"] = train_accuracy;
  j["clean_acc"] = std::isnan(clean_accuracy) ? nlohmann::json(nullptr) : nlohmann::json(clean_accuracy);
  j["robust"] = nlohmann::json::object();
  for (const auto& [n, a] : robust) j["robust"][n] = a;
  j["co_flag"] = co_flag;
  return j;
}

MetricsRecord MetricsRecord::from_json(const nlohmann::json& j) {
  MetricsRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.learning_rate = j.at("lr").get<double>();
  r.train_loss = j.at("train_loss").get<double>();
  r.train_cross_entropy = j.at("train_ce").get<double>();
  r.train_smoothness = j.at("train_smoothness").get<double>();
  r.train_accuracy = j.at("train_acc").get<double>();
  if (!j.at("clean_acc").is_null()) r.clean_accuracy = j.at("clean_acc").get<double>();
  for (const auto& [n, a] : j.at("robust").items()) r.robust.emplace_back(n, a.get<double>());
  r.co_flag = j.at("co_flag").get<bool>();
  return r;
}

std::vector<bool> detect_co(std::span<const double> robust_accuracy) {
  std::vector<bool> flags(robust_accuracy.size(), false);
  double best = -1.0;
  for (std::size_t e = 0; e < robust_accuracy.size(); ++e) {
    if (best >= 0.20 && robust_accuracy[e] < 0.5 * best) flags[e] = true;
    best = std::max(best, robust_accuracy[e]);
  }
  return flags;
}

template <typename T>
LossTerms guided_loss_backward(const Classifier<T>& model, const ForwardTrace<T>& adv_trace, const Matrix& adv_logits,
                               const ForwardTrace<T>& init_trace, const Matrix& init_logits,
                               const SupervisionMatrix& targets, std::span<const double> weights, Gradients<T>& grads) {
  const Matrix adv_probs = softmax(adv_logits);
  const Matrix init_probs = softmax(init_logits);
  const LossTerms terms = total_loss(adv_probs, init_probs, targets, weights);
  const std::size_t b = adv_probs.rows(), l = adv_probs.cols();

  // Smoothness part through the probabilities; cross-entropy directly in logit
  // space, where entries clamped at the probability floor contribute nothing.
  const LossGradient smooth = total_loss_gradient(adv_probs, init_probs, Matrix(b, l), weights);
  Matrix dz_adv = softmax_backward(adv_probs, smooth.d_adv_probs);
  for (std::size_t i = 0; i < b; ++i) {
    double mass = 0.0;
    for (std::size_t c = 0; c < l; ++c) {
      if (adv_probs(i, c) > kProbabilityFloor) mass += targets(i, c);
    }
    for (std::size_t c = 0; c < l; ++c) {
      const double t = adv_probs(i, c) > kProbabilityFloor ? targets(i, c) : 0.0;
      dz_adv(i, c) += (mass * adv_probs(i, c) - t) / static_cast<double>(b);
    }
  }
  model.backward(adv_trace, to_tensor<T>(dz_adv), &grads, false);
  if (std::any_of(weights.begin(), weights.end(), [](double w) { return w != 0.0; })) {
    const Matrix dz_init = softmax_backward(init_probs, smooth.d_init_probs);
    model.backward(init_trace, to_tensor<T>(dz_init), &grads, false);
  }
  return terms;
}

template LossTerms guided_loss_backward(const Classifier<float>&, const ForwardTrace<float>&, const Matrix&,
                                        const ForwardTrace<float>&, const Matrix&, const SupervisionMatrix&,
                                        std::span<const double>, Gradients<float>&);
template LossTerms guided_loss_backward(const Classifier<double>&, const ForwardTrace<double>&, const Matrix&,
                                        const ForwardTrace<double>&, const Matrix&, const SupervisionMatrix&,
                                        std::span<const double>, Gradients<double>&);

Trainer::Trainer(Classifier<float>& model, const IndexedDataset& train, const IndexedDataset& holdout, TrainPlan plan,
                 GuidanceConfig guidance, TrainOptions options)
    : model_(model),
      train_(train),
      holdout_(holdout),
      plan_(std::move(plan)),
      guidance_(guidance),
      options_(std::move(options)) {
  plan_.validate();
  guidance_.validate();
  if (train_.size() == 0) throw ValidationError("training set is empty");
  if (train_.num_classes != guidance_.num_classes || model_.num_classes() != guidance_.num_classes) {
    throw ConfigError("dataset, model and guidance disagree on the number of classes");
  }
  if (train_.shape != model_.input_shape()) throw ConfigError("dataset image shape does not match the model input");
  check_plan_guidance(plan_, guidance_);
  if (std::none_of(options_.eval_attacks.begin(), options_.eval_attacks.end(),
                   [](const AttackSpec& a) { return a.name == "pgd10"; })) {
    options_.eval_attacks.insert(options_.eval_attacks.begin(), parse_attack("pgd10"));
  }
  optimizer_ = OptimizerState<float>::for_model(model_, plan_.learning_rate, plan_.momentum, plan_.weight_decay);
  store_ = PerturbationStore(train_.ids, train_.shape.size(), guidance_.xi_base, derive_seed(options_.seed, "store"));
}

BatchRecord Trainer::train_batch(const Batch& batch, int epoch, std::size_t index, Gradients<float>* grads_out) {
  const std::size_t b = batch.size();
  const std::size_t l = static_cast<std::size_t>(guidance_.num_classes);
  const Tensor<float>& x = batch.images;
  const Shape sample_shape(x.shape().begin() + 1, x.shape().end());
  const bool inherit = plan_.trainer != TrainerKind::kFgsmRs;
  const bool guided = plan_.trainer == TrainerKind::kDdg;

  Tensor<float> delta_init;
  if (inherit) {
    delta_init = store_.read(batch.ids, sample_shape);
  } else {
    delta_init = Tensor<float>(x.shape());
    std::uniform_real_distribution<double> u(-guidance_.xi_base, guidance_.xi_base);
    for (std::size_t k = 0; k < delta_init.size(); ++k) delta_init[k] = static_cast<float>(u(noise_rng_));
  }
  Tensor<float> x_init(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) x_init[k] = std::clamp(x[k] + delta_init[k], 0.0f, 1.0f);

  ForwardTrace<float> init_trace;
  const Matrix init_logits = to_matrix(model_.forward(x_init, Mode::kTrainFrozenStats, &init_trace));
  // Diverged weights show up here first, before any loss is formed.
  auto require_finite = [&](const Matrix& logits) {
    for (double v : logits.values()) {
      if (!std::isfinite(v)) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        throw NanLossError(epoch, index, nan, nan);
      }
    }
  };
  require_finite(init_logits);
  const Matrix init_probs = softmax(init_logits);
  const ConfidenceRank ranks = rank_confidence(init_probs, batch.labels);
  if (options_.hook) options_.hook->on_confidences(ranks.confidences);

  BudgetVector budgets;
  if (guided && !plan_.disable_pba && b >= 2 && static_cast<std::size_t>(guidance_.tau1) < b) {
    budgets = allocate_budgets(ranks, guidance_, b);
  } else {
    budgets = BudgetVector::uniform(b, guidance_.xi_base);
  }
  if (options_.hook) options_.hook->adjust_budgets(budgets);

  // Sign of the cross-entropy input gradient at the initial point.
  Matrix dz(b, l);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t c = 0; c < l; ++c) dz(i, c) = init_probs(i, c) - (static_cast<int>(c) == batch.labels[i]);
  }
  const Tensor<float> input_grad = model_.backward(init_trace, to_tensor<float>(dz), nullptr, true);

  AdversarialBatch<float> adv;
  if (inherit) {
    adv = ddg_perturb(x, delta_init, input_grad, budgets, guidance_.xi_base);
    store_.write(batch.ids, adv.deltas, budgets.xi);
  } else {
    std::vector<double> steps(b);
    for (std::size_t i = 0; i < b; ++i) steps[i] = budgets.xi[i] * plan_.fgsm_rs_step_scale;
    adv = signed_step(x, delta_init, input_grad, steps, budgets.xi);
  }

  ForwardTrace<float> adv_trace;
  const Matrix adv_logits = to_matrix(model_.forward(adv.adv_inputs, Mode::kTrain, &adv_trace));
  require_finite(adv_logits);
  const Matrix adv_probs = softmax(adv_logits);
  const PredictionState state = prediction_state(adv_probs, batch.labels);

  SupervisionMatrix targets;
  switch (plan_.trainer) {
    case TrainerKind::kFgsmRs:
      targets = relax_labels(batch.labels, 1.0, guidance_.num_classes);
      break;
    case TrainerKind::kUniformGuidance:
      targets = relax_labels(batch.labels, guidance_.gamma, guidance_.num_classes);
      break;
    case TrainerKind::kDdg:
      targets = relax_labels(batch.labels, guidance_.gamma, guidance_.num_classes);
      if (!plan_.disable_ssa) {
        targets = adjust_supervision(targets, batch.labels, adv_probs, state, guidance_, plan_.pos_scale,
                                     plan_.neg_scale);
      }
      break;
  }
  if (options_.hook) options_.hook->adjust_targets(targets, batch.labels, adv_probs);

  std::vector<double> weights(b, 0.0);
  if (guided && !plan_.disable_gs) weights = smoothness_weights(budgets, state.misclassified, guidance_);

  const LossTerms probe = total_loss(adv_probs, init_probs, targets, weights);
  if (!std::isfinite(probe.cross_entropy) || !std::isfinite(probe.smoothness)) {
    throw NanLossError(epoch, index, probe.cross_entropy, probe.smoothness);
  }
  Gradients<float> grads = model_.zero_gradients();
  const LossTerms terms =
      guided_loss_backward(model_, adv_trace, adv_logits, init_trace, init_logits, targets, weights, grads);
  for (const auto& g : grads) {
    for (float v : g.values()) {
      if (!std::isfinite(v)) throw NanLossError(epoch, index, terms.cross_entropy, terms.smoothness);
    }
  }
  sgd_step(model_, grads, optimizer_);
  if (grads_out) *grads_out = std::move(grads);

  BatchRecord rec;
  rec.epoch = epoch;
  rec.index = index;
  rec.size = b;
  rec.accuracy = state.accuracy;
  rec.loss = terms;
  for (float v : adv.deltas.values()) rec.max_abs_delta = std::max(rec.max_abs_delta, std::abs(static_cast<double>(v)));
  rec.budgets = budgets.xi;
  return rec;
}

MetricsRecord Trainer::run_epoch(int epoch) {
  const auto start = std::chrono::steady_clock::now();
  const auto seed = options_.seed;
  const auto e = static_cast<std::uint64_t>(epoch);
  optimizer_.learning_rate = plan_.learning_rate_at(epoch);
  noise_rng_.seed(derive_seed(seed, "fgsm_rs", {e}));
  std::mt19937_64 augment_rng(derive_seed(seed, "augment", {e}));

  MetricsRecord m;
  m.epoch = epoch;
  m.learning_rate = optimizer_.learning_rate;
  BatchIterator it(train_, plan_.batch_size, true, derive_seed(seed, "shuffle", {e}));
  Batch batch;
  std::size_t index = 0, seen = 0;
  double correct = 0.0;
  while (it.next(batch)) {
    if (plan_.augment) augment_batch(batch.images, augment_rng);
    const BatchRecord rec = train_batch(batch, epoch, index++);
    const auto n = static_cast<double>(rec.size);
    m.train_cross_entropy += rec.loss.cross_entropy * n;
    m.train_smoothness += rec.loss.smoothness * n;
    correct += rec.accuracy * n;
    seen += rec.size;
    if (options_.on_batch) options_.on_batch(rec);
  }
  const auto total = static_cast<double>(seen);
  m.train_cross_entropy /= total;
  m.train_smoothness /= total;
  m.train_loss = m.train_cross_entropy + m.train_smoothness;
  m.train_accuracy = correct / total;

  if (holdout_.size() > 0) {
    EvalOptions eo;
    eo.seed = seed;
    eo.epoch = epoch;
    eo.batch_size = options_.eval_batch_size;
    eo.limit = options_.eval_limit;
    const RobustnessReport report = evaluate_robustness(model_, holdout_, options_.eval_attacks, eo);
    m.clean_accuracy = report.clean_accuracy;
    m.robust = report.robust;
    pgd_history_.push_back(report.accuracy("pgd10"));
    m.co_flag = detect_co(pgd_history_).back();
  }
  m.wallclock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

TrainResult Trainer::run() {
  TrainResult result{{}, model_, 0, model_};
  double best = -1.0;
  for (int epoch = 1; epoch <= plan_.epochs; ++epoch) {
    MetricsRecord m = run_epoch(epoch);
    const double pgd = m.robust_accuracy("pgd10").value_or(-1.0);
    if (pgd > best || result.best_epoch == 0 || holdout_.size() == 0) {
      if (pgd > best) best = pgd;
      result.best = model_;
      result.best_epoch = epoch;
    }
    if (options_.on_epoch) options_.on_epoch(m);
    result.history.push_back(std::move(m));
  }
  result.final_model = model_;
  return result;
}

TrainResult train_ddg(Classifier<float>& model, const IndexedDataset& train, const IndexedDataset& holdout,
                      const TrainPlan& plan, const GuidanceConfig& guidance, const TrainOptions& options) {
  TrainPlan p = plan;
  p.trainer = TrainerKind::kDdg;
  return Trainer(model, train, holdout, p, guidance, options).run();
}

TrainResult train_baseline(Classifier<float>& model, const IndexedDataset& train, const IndexedDataset& holdout,
                           const TrainPlan& plan, const GuidanceConfig& guidance, const TrainOptions& options) {
  if (plan.trainer == TrainerKind::kDdg) throw ConfigError("train_baseline needs trainer fgsm_rs or uniform_guidance");
  return Trainer(model, train, holdout, plan, guidance, options).run();
}

}  // namespace ddg
