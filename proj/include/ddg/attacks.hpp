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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ddg/classifier.hpp"
#include "ddg/data.hpp"
#include "ddg/guidance.hpp"

namespace ddg {

enum class AttackKind { kFgsm, kBim, kPgd, kCwPgd };

/// l-inf attack in [0,1] pixel space. cw_pgd ascends the logit margin
/// max_{c != y} z_c - z_y instead of cross-entropy.
struct AttackSpec {
  std::string name;
  AttackKind kind = AttackKind::kPgd;
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int num_steps = 10;
  bool random_start = true;

  void validate() const;
};

/// Parses fgsm, bim, bimN, pgdN, cw and cwN. fgsm steps by epsilon, the
/// iterative attacks by 2/255. bim and cw without a count mean 10 steps.
AttackSpec parse_attack(const std::string& name, double epsilon = 8.0 / 255.0);
std::vector<AttackSpec> parse_attacks(const std::vector<std::string>& names, double epsilon = 8.0 / 255.0);

/// Largest T not exceeding v, so |delta| <= v survives the conversion.
template <typename T>
T floor_to(double v);

template <typename T>
struct AdversarialBatch {
  Tensor<T> adv_inputs;  ///< clip(clean + deltas, 0, 1)
  Tensor<T> deltas;
  std::vector<bool> success;  ///< prediction on adv_inputs differs from the label
};

/// delta_i = clip(init_i + step_i * sign(grad_i), -bound_i, bound_i),
/// adv_i = clip(x_i + delta_i, 0, 1). sign(0) = 0. No model involved.
template <typename T>
AdversarialBatch<T> signed_step(const Tensor<T>& clean, const Tensor<T>& delta_init, const Tensor<T>& grad,
                                 std::span<const double> step_sizes, std::span<const double> bounds);

/// The guided single-step update: step max(xi_i, xi_base), bound xi_i.
template <typename T>
AdversarialBatch<T> ddg_perturb(const Tensor<T>& clean, const Tensor<T>& delta_init, const Tensor<T>& grad,
                                const BudgetVector& budgets, double xi_base);

/// ddg_perturb with the cross-entropy gradient taken at clip(x + delta_init, 0, 1).
template <typename T>
AdversarialBatch<T> ddg_single_step(Classifier<T>& model, const Tensor<T>& clean, std::span<const int> labels,
                                    const Tensor<T>& delta_init, const BudgetVector& budgets, double xi_base,
                                    Mode mode = Mode::kEval);

/// Called with (step, adversarial inputs) after the start point (step 0) and after every update.
template <typename T>
using AttackObserver = std::function<void(int, const Tensor<T>&)>;

/// Runs an attack. `start_seeds` (one per sample) seed the random start and
/// are required when spec.random_start is set.
template <typename T>
AdversarialBatch<T> run_attack(Classifier<T>& model, const Tensor<T>& clean, std::span<const int> labels,
                               const AttackSpec& spec, std::span<const std::uint64_t> start_seeds = {},
                               Mode mode = Mode::kEval, const AttackObserver<T>& observer = {});

/// Loss each attack ascends, per sample: cross-entropy, or the logit margin for cw_pgd.
template <typename T>
std::vector<double> attack_objective(Classifier<T>& model, const Tensor<T>& inputs, std::span<const int> labels,
                                     AttackKind kind, Mode mode = Mode::kEval);

struct EvalOptions {
  std::uint64_t seed = 0;
  int epoch = 0;
  std::size_t batch_size = 256;
  std::size_t limit = 0;  ///< 0 evaluates every example
};

struct RobustnessReport {
  std::size_t num_samples = 0;
  double clean_accuracy = 0.0;
  std::vector<std::pair<std::string, double>> robust;  ///< in the order the attacks were given

  double accuracy(const std::string& attack) const;
};

/// Accuracy on clean inputs and under every attack. Random starts are seeded
/// by (seed, attack name, epoch, example id), so results do not depend on
/// batch size or attack order.
template <typename T>
RobustnessReport evaluate_robustness(Classifier<T>& model, const IndexedDataset& data,
                                     const std::vector<AttackSpec>& attacks, const EvalOptions& options = {});

}  // namespace ddg
