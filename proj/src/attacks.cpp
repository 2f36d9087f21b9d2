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

#include "ddg/attacks.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <random>

#include "ddg/errors.hpp"
#include "ddg/random.hpp"

namespace ddg {

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("attack " + name + ": epsilon must lie in [0,1]");
  if (!(step_size >= 0.0)) throw ConfigError("attack " + name + ": step size must be non-negative");
  if (num_steps < 1) throw ConfigError("attack " + name + ": needs at least one step");
}

AttackSpec parse_attack(const std::string& name, double epsilon) {
  auto count = [&](std::size_t prefix, int fallback) {
    if (name.size() == prefix) {
      if (fallback > 0) return fallback;
      throw ConfigError("attack '" + name + "' needs a step count, e.g. pgd10");
    }
    const std::string digits = name.substr(prefix);
    if (!std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); }) ||
        digits.size() > 6) {
      throw ConfigError("unknown attack '" + name + "'");
    }
    const int n = std::stoi(digits);
    if (n < 1) throw ConfigError("attack '" + name + "' needs at least one step");
    return n;
  };
  AttackSpec s;
  s.name = name;
  s.epsilon = epsilon;
  if (name == "fgsm") {
    s.kind = AttackKind::kFgsm;
    s.step_size = epsilon;
    s.num_steps = 1;
    s.random_start = false;
  } else if (name.starts_with("bim")) {
    s.kind = AttackKind::kBim;
    s.num_steps = count(3, 10);
    s.random_start = false;
  } else if (name.starts_with("pgd")) {
    s.kind = AttackKind::kPgd;
    s.num_steps = count(3, 0);
  } else if (name.starts_with("cw")) {
    s.kind = AttackKind::kCwPgd;
    s.num_steps = count(2, 10);
  } else {
    throw ConfigError("unknown attack '" + name + "' (expected fgsm, bim[N], pgdN or cw[N])");
  }
  s.validate();
  return s;
}

std::vector<AttackSpec> parse_attacks(const std::vector<std::string>& names, double epsilon) {
  std::vector<AttackSpec> out;
  for (const auto& n : names) out.push_back(parse_attack(n, epsilon));
  return out;
}

template <typename T>
T floor_to(double v) {
  T t = static_cast<T>(v);
  if (static_cast<double>(t) > v) t = std::nextafter(t, -std::numeric_limits<T>::infinity());
  return t;
}

namespace {

template <typename T>
T sign_of(T g) {
  return g > T{0} ? T{1} : (g < T{0} ? T{-1} : T{0});
}

template <typename T>
void check_same_batch(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(what) + ": shape " + shape_to_string(b.shape()) + " does not match " +
                          shape_to_string(a.shape()));
  }
}

template <typename T>
Tensor<T> clipped_sum(const Tensor<T>& clean, const Tensor<T>& delta) {
  Tensor<T> out(clean.shape());
  for (std::size_t k = 0; k < clean.size(); ++k) out[k] = std::clamp<T>(clean[k] + delta[k], T{0}, T{1});
  return out;
}

template <typename T>
std::vector<bool> misclassified(Classifier<T>& model, const Tensor<T>& inputs, std::span<const int> labels,
                                Mode mode) {
  Mode m = mode == Mode::kTrain ? Mode::kTrainFrozenStats : mode;
  return prediction_state(predict_probabilities(model, inputs, m), labels).misclassified;
}

template <typename T>
Tensor<T> objective_gradient(Classifier<T>& model, const Tensor<T>& inputs, std::span<const int> labels,
                             AttackKind kind, Mode mode) {
  if (kind != AttackKind::kCwPgd) return model.input_gradient(inputs, labels, mode);
  ForwardTrace<T> trace;
  const Matrix logits = to_matrix(model.forward(inputs, mode, &trace));
  Matrix dz(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const int other = most_probable_incorrect(logits.row(i), labels[i]);
    dz(i, other) = 1.0;
    dz(i, labels[i]) = -1.0;
  }
  return model.backward(trace, to_tensor<T>(dz), nullptr, true);
}

}  // namespace

template <typename T>
AdversarialBatch<T> signed_step(const Tensor<T>& clean, const Tensor<T>& delta_init, const Tensor<T>& grad,
                                std::span<const double> step_sizes, std::span<const double> bounds) {
  check_same_batch(clean, delta_init, "delta_init");
  check_same_batch(clean, grad, "gradient");
  if (clean.rank() < 1) throw ValidationError("signed_step: expected a batch");
  const std::size_t b = clean.dim(0);
  if (step_sizes.size() != b || bounds.size() != b) {
    throw ValidationError("signed_step: need one step size and one bound per sample");
  }
  AdversarialBatch<T> out;
  out.deltas = Tensor<T>(clean.shape());
  const std::size_t d = clean.stride0();
  for (std::size_t i = 0; i < b; ++i) {
    if (!(bounds[i] >= 0.0) || !(step_sizes[i] >= 0.0)) {
      throw ValidationError("signed_step: sample " + std::to_string(i) + " has a negative step or bound");
    }
    const T bound = floor_to<T>(bounds[i]);
    const T step = static_cast<T>(step_sizes[i]);
    for (std::size_t k = i * d; k < (i + 1) * d; ++k) {
      out.deltas[k] = std::clamp<T>(delta_init[k] + step * sign_of(grad[k]), -bound, bound);
    }
  }
  out.adv_inputs = clipped_sum(clean, out.deltas);
  return out;
}

template <typename T>
AdversarialBatch<T> ddg_perturb(const Tensor<T>& clean, const Tensor<T>& delta_init, const Tensor<T>& grad,
                                const BudgetVector& budgets, double xi_base) {
  std::vector<double> steps(budgets.size());
  for (std::size_t i = 0; i < steps.size(); ++i) steps[i] = std::max(budgets.xi[i], xi_base);
  return signed_step(clean, delta_init, grad, steps, budgets.xi);
}

template <typename T>
AdversarialBatch<T> ddg_single_step(Classifier<T>& model, const Tensor<T>& clean, std::span<const int> labels,
                                    const Tensor<T>& delta_init, const BudgetVector& budgets, double xi_base,
                                    Mode mode) {
  check_same_batch(clean, delta_init, "delta_init");
  const Tensor<T> start = clipped_sum(clean, delta_init);
  const Tensor<T> grad = model.input_gradient(start, labels, mode);
  auto out = ddg_perturb(clean, delta_init, grad, budgets, xi_base);
  out.success = misclassified(model, out.adv_inputs, labels, mode);
  return out;
}

template <typename T>
AdversarialBatch<T> run_attack(Classifier<T>& model, const Tensor<T>& clean, std::span<const int> labels,
                               const AttackSpec& spec, std::span<const std::uint64_t> start_seeds, Mode mode,
                               const AttackObserver<T>& observer) {
  spec.validate();
  if (clean.rank() != 4) throw ValidationError("run_attack expects B x C x H x W inputs");
  const std::size_t b = clean.dim(0), d = clean.stride0();
  if (labels.size() != b) throw ValidationError("run_attack: one label per sample required");
  for (std::size_t k = 0; k < clean.size(); ++k) {
    if (!(clean[k] >= T{0} && clean[k] <= T{1})) throw ValidationError("run_attack: clean inputs must lie in [0,1]");
  }
  if (spec.random_start && start_seeds.size() != b) {
    throw ValidationError("run_attack: " + spec.name + " needs one start seed per sample");
  }

  const T bound = floor_to<T>(spec.epsilon);
  const T step = static_cast<T>(spec.step_size);
  Tensor<T> delta(clean.shape());
  if (spec.random_start) {
    for (std::size_t i = 0; i < b; ++i) {
      std::mt19937_64 rng(start_seeds[i]);
      std::uniform_real_distribution<double> u(-spec.epsilon, spec.epsilon);
      for (std::size_t k = i * d; k < (i + 1) * d; ++k) delta[k] = static_cast<T>(u(rng));
    }
  }
  auto project = [&] {
    for (std::size_t k = 0; k < delta.size(); ++k) {
      delta[k] = std::clamp<T>(delta[k], -bound, bound);
      delta[k] = std::clamp<T>(delta[k], -clean[k], T{1} - clean[k]);
    }
  };
  project();
  Tensor<T> adv = clipped_sum(clean, delta);
  if (observer) observer(0, adv);
  for (int s = 1; s <= spec.num_steps; ++s) {
    const Tensor<T> g = objective_gradient(model, adv, labels, spec.kind, mode);
    for (std::size_t k = 0; k < delta.size(); ++k) delta[k] += step * sign_of(g[k]);
    project();
    adv = clipped_sum(clean, delta);
    if (observer) observer(s, adv);
  }
  AdversarialBatch<T> out;
  out.success = misclassified(model, adv, labels, mode);
  out.adv_inputs = std::move(adv);
  out.deltas = std::move(delta);
  return out;
}

template <typename T>
std::vector<double> attack_objective(Classifier<T>& model, const Tensor<T>& inputs, std::span<const int> labels,
                                     AttackKind kind, Mode mode) {
  const Matrix logits = to_matrix(model.forward(inputs, mode));
  std::vector<double> out(logits.rows());
  if (kind == AttackKind::kCwPgd) {
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      out[i] = logits(i, most_probable_incorrect(logits.row(i), labels[i])) - logits(i, labels[i]);
    }
  } else {
    const Matrix p = softmax(logits);
    for (std::size_t i = 0; i < p.rows(); ++i) out[i] = -std::log(std::max(p(i, labels[i]), kProbabilityFloor));
  }
  return out;
}

double RobustnessReport::accuracy(const std::string& attack) const {
  for (const auto& [n, a] : robust) {
    if (n == attack) return a;
  }
  throw ValidationError("no robust accuracy recorded for attack '" + attack + "'");
}

template <typename T>
RobustnessReport evaluate_robustness(Classifier<T>& model, const IndexedDataset& data,
                                     const std::vector<AttackSpec>& attacks, const EvalOptions& options) {
  const std::size_t n = options.limit > 0 ? std::min(options.limit, data.size()) : data.size();
  if (n == 0) throw ValidationError("evaluate_robustness: the evaluation set is empty");
  if (options.batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  for (const auto& a : attacks) a.validate();

  std::vector<std::size_t> clean_correct(1, 0), attack_correct(attacks.size(), 0);
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += options.batch_size) {
    rows.clear();
    for (std::size_t r = start; r < std::min(n, start + options.batch_size); ++r) rows.push_back(r);
    const Batch batch = make_batch(data, rows);
    const Tensor<T> x = batch.images.template cast<T>();
    for (bool wrong : misclassified(model, x, batch.labels, Mode::kEval)) clean_correct[0] += !wrong;
    for (std::size_t a = 0; a < attacks.size(); ++a) {
      std::vector<std::uint64_t> seeds;
      for (auto id : batch.ids) {
        seeds.push_back(derive_seed(options.seed, "eval",
                                    {fnv1a(attacks[a].name), static_cast<std::uint64_t>(options.epoch),
                                     static_cast<std::uint64_t>(id)}));
      }
      const auto adv = run_attack(model, x, batch.labels, attacks[a], seeds, Mode::kEval);
      for (bool wrong : adv.success) attack_correct[a] += !wrong;
    }
  }
  RobustnessReport report;
  report.num_samples = n;
  report.clean_accuracy = static_cast<double>(clean_correct[0]) / static_cast<double>(n);
  for (std::size_t a = 0; a < attacks.size(); ++a) {
    report.robust.emplace_back(attacks[a].name, static_cast<double>(attack_correct[a]) / static_cast<double>(n));
  }
  return report;
}

#define DDG_INSTANTIATE_ATTACKS(T)                                                                                   \
  template T floor_to<T>(double);                                                                                   \
  template AdversarialBatch<T> signed_step(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                  \
                                           std::span<const double>, std::span<const double>);                       \
  template AdversarialBatch<T> ddg_perturb(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                  \
                                           const BudgetVector&, double);                                             \
  template AdversarialBatch<T> ddg_single_step(Classifier<T>&, const Tensor<T>&, std::span<const int>,             \
                                               const Tensor<T>&, const BudgetVector&, double, Mode);                 \
  template AdversarialBatch<T> run_attack(Classifier<T>&, const Tensor<T>&, std::span<const int>,                  \
                                          const AttackSpec&, std::span<const std::uint64_t>, Mode,                   \
                                          const AttackObserver<T>&);                                                 \
  template std::vector<double> attack_objective(Classifier<T>&, const Tensor<T>&, std::span<const int>, AttackKind, \
                                                Mode);                                                               \
  template RobustnessReport evaluate_robustness(Classifier<T>&, const IndexedDataset&,                              \
                                                const std::vector<AttackSpec>&, const EvalOptions&);

DDG_INSTANTIATE_ATTACKS(float)
DDG_INSTANTIATE_ATTACKS(double)
#undef DDG_INSTANTIATE_ATTACKS

}  // namespace ddg
