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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddg/architectures.hpp"
#include "ddg/attacks.hpp"
#include "ddg/data.hpp"
#include "ddg/guidance.hpp"
#include "ddg/train.hpp"

namespace ddg {

/// Each batch is split by confidence into `num_groups` contiguous blocks;
/// group 0 holds the most confident samples.
struct GroupSpec {
  int num_groups = 4;
  int selected_group = 0;

  void validate() const;
};

/// What happens to the selected group: an optional fixed budget and extra
/// target mass on the true class (beta1) and on the most probable wrong class (beta2).
struct OverrideSpec {
  std::optional<double> budget;
  double beta1 = 0.0;
  double beta2 = 0.0;

  void validate() const;
};

/// Group index per sample. Ranking is by descending confidence with ties
/// broken by batch position; the first B mod G groups get one extra sample.
std::vector<int> partition_groups(std::span<const double> confidences, int num_groups);

BudgetVector apply_budget_override(const BudgetVector& budgets, std::span<const int> groups, const GroupSpec& group,
                                   const OverrideSpec& spec);

/// Rows of the selected group become targets + beta1 * onehot(y) + beta2 * onehot(y_m),
/// y_m being the most probable wrong class under `probs`. Other rows are copied.
SupervisionMatrix apply_label_override(const SupervisionMatrix& targets, const Matrix& probs,
                                       std::span<const int> labels, std::span<const int> groups,
                                       const GroupSpec& group, const OverrideSpec& spec);

/// Applies a group override inside the training loop. Batches with fewer
/// samples than groups are passed through unchanged.
class GroupOverrideHook : public BatchHook {
 public:
  GroupOverrideHook(GroupSpec group, OverrideSpec spec);

  void on_confidences(std::span<const double> confidences) override;
  void adjust_budgets(BudgetVector& budgets) override;
  void adjust_targets(SupervisionMatrix& targets, std::span<const int> labels, const Matrix& adv_probs) override;

  const std::vector<int>& groups() const { return groups_; }
  std::size_t overridden_samples() const { return overridden_; }

 private:
  GroupSpec group_;
  OverrideSpec spec_;
  std::vector<int> groups_;
  std::size_t overridden_ = 0;
};

struct SweepEntry {
  std::string label;
  GroupSpec group;
  OverrideSpec override_spec;
  bool baseline = false;  ///< no override at all
};

/// Sweep grammar, entries separated by ';':
///   groups=4;budget=16/255;beta1=0,0.5;beta2=0;baseline
/// Keys: groups (G), select (comma list or "all"), budget, beta1, beta2
/// (comma lists form a grid), baseline (adds one override-free run).
/// Blank text is an empty sweep.
std::vector<SweepEntry> parse_sweep(const std::string& text);

struct SweepContext {
  ArchitectureSpec architecture;
  TrainPlan plan;
  GuidanceConfig guidance;
  const IndexedDataset* train = nullptr;
  const IndexedDataset* holdout = nullptr;
  std::uint64_t seed = 0;
  std::vector<AttackSpec> eval_attacks;
  std::size_t eval_limit = 0;
  std::size_t eval_batch_size = 256;
  int workers = 1;
};

struct SweepRunResult {
  SweepEntry entry;
  bool failed = false;
  std::string error;
  std::vector<MetricsRecord> history;
  bool catastrophic_overfitting = false;
};

/// Trains one model per entry on a bounded worker pool. A failing run is
/// recorded and the others continue. Results follow the entry order.
std::vector<SweepRunResult> run_sweep(const SweepContext& context, const std::vector<SweepEntry>& entries,
                                      const std::function<void(const SweepRunResult&)>& on_done = {});

}  // namespace ddg
