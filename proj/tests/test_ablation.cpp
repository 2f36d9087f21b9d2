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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "ddg/ablation.hpp"
#include "ddg/errors.hpp"
#include "ddg/random.hpp"
#include "test_util.hpp"

namespace ddg {
namespace {

constexpr double k255 = 255.0;

std::vector<std::size_t> block_sizes(const std::vector<int>& groups, int g) {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(g));
  for (int k : groups) ++sizes.at(static_cast<std::size_t>(k));
  return sizes;
}

TEST(PartitionGroups, BlocksOfTwoInDescendingOrder) {
  const std::vector<double> conf{0.3, 0.9, 0.1, 0.5, 0.8, 0.2, 0.7, 0.4};
  const auto g = partition_groups(conf, 4);
  EXPECT_EQ(g, (std::vector<int>{2, 0, 3, 1, 0, 3, 1, 2}));
}

TEST(PartitionGroups, BlockSizes) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> conf(128);
  for (auto& c : conf) c = u(rng);
  EXPECT_EQ(block_sizes(partition_groups(conf, 32), 32), std::vector<std::size_t>(32, 4));
  conf.resize(130);
  for (auto& c : conf) c = u(rng);
  EXPECT_EQ(block_sizes(partition_groups(conf, 4), 4), (std::vector<std::size_t>{33, 33, 32, 32}));
}

TEST(PartitionGroups, BlocksAreContiguousInConfidence) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = 2 + rng() % 60;
    const int g = 1 + static_cast<int>(rng() % b);
    std::vector<double> conf(b);
    // Coarse values force plenty of ties.
    for (auto& c : conf) c = static_cast<double>(rng() % 5) / 4.0;
    const auto groups = partition_groups(conf, g);
    const auto sizes = block_sizes(groups, g);
    EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1u);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < b; ++j) {
        if (conf[i] > conf[j]) ASSERT_LE(groups[i], groups[j]);
        if (conf[i] == conf[j] && i < j) ASSERT_LE(groups[i], groups[j]);
      }
    }
  }
}

TEST(PartitionGroups, TooFewSamplesIsAnError) {
  const std::vector<double> conf{0.1, 0.2, 0.3};
  EXPECT_THROW(partition_groups(conf, 4), ValidationError);
}

TEST(BudgetOverride, LowestGroupGetsTheOverride) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> conf(128);
  for (auto& c : conf) c = u(rng);
  const auto groups = partition_groups(conf, 4);
  const BudgetVector base = BudgetVector::uniform(128, 8.0 / k255);
  OverrideSpec spec;
  spec.budget = 16.0 / k255;
  const auto out = apply_budget_override(base, groups, {4, 3}, spec);
  EXPECT_EQ(std::count(out.xi.begin(), out.xi.end(), 16.0 / k255), 32);
  EXPECT_EQ(std::count(out.xi.begin(), out.xi.end(), 8.0 / k255), 96);
  for (std::size_t i = 0; i < 128; ++i) EXPECT_EQ(out.xi[i] == 16.0 / k255, groups[i] == 3);

  spec.budget = 8.0 / k255;
  EXPECT_EQ(apply_budget_override(base, groups, {4, 3}, spec).xi, base.xi);
  spec.budget.reset();
  EXPECT_EQ(apply_budget_override(base, groups, {4, 3}, spec).xi, base.xi);
}

TEST(LabelOverride, WorkedExamples) {
  const std::vector<int> labels{3, 3};
  const SupervisionMatrix relaxed = relax_labels(labels, 0.9, 10);
  Matrix probs(2, 10);
  for (std::size_t c = 0; c < 10; ++c) probs(0, c) = probs(1, c) = 0.05;
  probs(0, 7) = 0.55;
  probs(1, 2) = 0.55;
  const std::vector<int> groups{0, 1};
  OverrideSpec spec;
  spec.beta2 = -0.1;
  auto out = apply_label_override(relaxed, probs, labels, groups, {2, 0}, spec);
  EXPECT_NEAR(out(0, 3), 0.91, 1e-12);
  EXPECT_NEAR(out(0, 7), -0.09, 1e-12);
  for (std::size_t c = 0; c < 10; ++c) EXPECT_EQ(out(1, c), relaxed(1, c));
  spec.beta1 = 0.1;
  out = apply_label_override(relaxed, probs, labels, groups, {2, 0}, spec);
  EXPECT_NEAR(out(0, 3), 1.01, 1e-12);
  EXPECT_NEAR(out(0, 7), -0.09, 1e-12);
  spec = {};
  out = apply_label_override(relaxed, probs, labels, groups, {2, 0}, spec);
  for (std::size_t c = 0; c < 10; ++c) EXPECT_EQ(out(0, c), relaxed(0, c));
}

TEST(LabelOverride, RowSums) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> beta(-0.5, 0.5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 8;
    const auto labels = testing::random_labels(b, 10, rng);
    const auto probs = testing::random_probabilities(b, 10, rng);
    std::vector<double> conf(b);
    for (std::size_t i = 0; i < b; ++i) conf[i] = probs(i, labels[i]);
    const auto groups = partition_groups(conf, 4);
    OverrideSpec spec;
    spec.beta1 = beta(rng);
    spec.beta2 = beta(rng);
    const GroupSpec g{4, static_cast<int>(rng() % 4)};
    const auto out = apply_label_override(relax_labels(labels, 0.9, 10), probs, labels, groups, g, spec);
    for (std::size_t i = 0; i < b; ++i) {
      const double expected = groups[i] == g.selected_group ? 1.0 + spec.beta1 + spec.beta2 : 1.0;
      EXPECT_NEAR(out.row_sum(i), expected, 1e-9);
    }
  }
}

TEST(Specs, Validation) {
  EXPECT_THROW((GroupSpec{4, 4}.validate()), ConfigError);
  EXPECT_THROW((GroupSpec{1, 0}.validate()), ConfigError);
  EXPECT_NO_THROW((GroupSpec{32, 31}.validate()));
  OverrideSpec o;
  o.budget = 0.0;
  EXPECT_THROW(o.validate(), ConfigError);
  o.budget = 4.0 / k255;
  EXPECT_NO_THROW(o.validate());
  o.beta1 = std::nan("");
  EXPECT_THROW(o.validate(), ConfigError);
}

TEST(ParseSweep, GridAndLabels) {
  const auto entries = parse_sweep("groups=4;select=all;budget=16/255;baseline");
  ASSERT_EQ(entries.size(), 5u);
  EXPECT_TRUE(entries[0].baseline);
  for (int g = 0; g < 4; ++g) {
    const auto& e = entries[static_cast<std::size_t>(g) + 1];
    EXPECT_EQ(e.group.num_groups, 4);
    EXPECT_EQ(e.group.selected_group, g);
    EXPECT_DOUBLE_EQ(*e.override_spec.budget, 16.0 / k255);
    EXPECT_EQ(e.label, "G4-g" + std::to_string(g) + "-budget16");
  }
  const auto grid = parse_sweep("groups=8; select=7; beta1=0,0.1; beta2=-0.1");
  ASSERT_EQ(grid.size(), 2u);
  EXPECT_EQ(grid[0].label, "G8-g7-beta2_-0.1");
  EXPECT_EQ(grid[1].label, "G8-g7-beta1_0.1-beta2_-0.1");
  EXPECT_FALSE(grid[0].override_spec.budget.has_value());
}

TEST(ParseSweep, Errors) {
  EXPECT_THROW(parse_sweep("groups=4;select=4"), ConfigError);
  EXPECT_THROW(parse_sweep("groups=1"), ConfigError);
  EXPECT_THROW(parse_sweep("groups=4;colour=red"), ConfigError);
  EXPECT_THROW(parse_sweep("budget=abc"), ConfigError);
  EXPECT_THROW(parse_sweep("budget=1/0"), ConfigError);
  EXPECT_THROW(parse_sweep("beta1=nan"), ConfigError);
  EXPECT_TRUE(parse_sweep(" ; ").empty());
}

IndexedDataset sweep_data(std::uint64_t seed) {
  SyntheticOptions o;
  o.size = 40;
  o.num_classes = 4;
  o.shape = {3, 8, 8};
  o.seed = seed;
  return make_synthetic(o);
}

SweepContext small_context(const IndexedDataset& train, const IndexedDataset& hold) {
  SweepContext ctx;
  ctx.architecture = {"tiny-cnn", {3, 8, 8}, 4, 4};
  ctx.plan.trainer = TrainerKind::kUniformGuidance;
  ctx.plan.epochs = 2;
  ctx.plan.batch_size = 16;
  ctx.plan.milestones = {};
  ctx.guidance.num_classes = 4;
  ctx.train = &train;
  ctx.holdout = &hold;
  ctx.seed = 9;
  ctx.eval_attacks = parse_attacks({"fgsm"});
  return ctx;
}

class CountingHook : public GroupOverrideHook {
 public:
  using GroupOverrideHook::GroupOverrideHook;
  void adjust_budgets(BudgetVector& budgets) override {
    const BudgetVector before = budgets;
    GroupOverrideHook::adjust_budgets(budgets);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < budgets.size(); ++i) changed += budgets.xi[i] != before.xi[i];
    per_batch.emplace_back(budgets.size(), changed);
  }
  std::vector<std::pair<std::size_t, std::size_t>> per_batch;
};

TEST(GroupOverrideHook, TouchesOneBlockPerBatch) {
  const auto data = sweep_data(1);
  auto model = make_classifier<float>({"tiny-cnn", {3, 8, 8}, 4, 4}, 1);
  OverrideSpec spec;
  spec.budget = 16.0 / k255;
  CountingHook hook(GroupSpec{3, 2}, spec);
  TrainOptions options;
  options.hook = &hook;
  TrainPlan plan;
  plan.trainer = TrainerKind::kUniformGuidance;
  plan.epochs = 1;
  plan.batch_size = 16;
  plan.milestones = {};
  GuidanceConfig g;
  g.num_classes = 4;
  Trainer(model, data, IndexedDataset{}, plan, g, options).run_epoch(1);
  ASSERT_EQ(hook.per_batch.size(), 3u);
  for (const auto& [b, changed] : hook.per_batch) {
    EXPECT_GE(changed, b / 3);
    EXPECT_LE(changed, (b + 2) / 3);
  }
}

TEST(RunSweep, EmptySweepGivesEmptyReport) {
  const auto data = sweep_data(2);
  EXPECT_TRUE(run_sweep(small_context(data, data), {}).empty());
}

TEST(RunSweep, InertOverrideMatchesBaselineBitwise) {
  const auto all = sweep_data(3);
  const auto [train, hold] = split_holdout(all, 0.2, 1);
  auto ctx = small_context(train, hold);
  SweepEntry baseline;
  baseline.label = "baseline";
  baseline.baseline = true;
  SweepEntry inert;
  inert.label = "inert";
  inert.group = {4, 1};
  const auto results = run_sweep(ctx, {baseline, inert});
  ASSERT_EQ(results.size(), 2u);
  ASSERT_FALSE(results[0].failed) << results[0].error;
  ASSERT_EQ(results[0].history.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e) {
    EXPECT_EQ(results[0].history[e].to_json(), results[1].history[e].to_json());
  }

  auto model = make_classifier<float>(ctx.architecture, derive_seed(ctx.seed, "model"));
  TrainOptions options;
  options.seed = ctx.seed;
  options.eval_attacks = ctx.eval_attacks;
  const auto direct = train_baseline(model, train, hold, ctx.plan, ctx.guidance, options);
  EXPECT_EQ(direct.history.back().to_json(), results[0].history.back().to_json());
}

TEST(RunSweep, FailingRunIsRecordedAndOthersContinue) {
  const auto all = sweep_data(4);
  const auto [train, hold] = split_holdout(all, 0.2, 2);
  auto ctx = small_context(train, hold);
  ctx.workers = 2;
  auto entries = parse_sweep("groups=4;select=0;beta1=0.3,0.1;baseline");
  entries[1].override_spec.beta1 = std::nan("");
  std::vector<std::string> done;
  const auto results = run_sweep(ctx, entries, [&](const SweepRunResult& r) { done.push_back(r.entry.label); });
  ASSERT_EQ(results.size(), 3u);
  EXPECT_EQ(done.size(), 3u);
  EXPECT_FALSE(results[0].failed);
  EXPECT_TRUE(results[1].failed);
  EXPECT_FALSE(results[1].error.empty());
  EXPECT_FALSE(results[2].failed) << results[2].error;
  EXPECT_EQ(results[2].history.size(), 2u);
}

}  // namespace
}  // namespace ddg
