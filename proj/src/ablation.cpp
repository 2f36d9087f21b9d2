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

#include "ddg/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "ddg/errors.hpp"
#include "ddg/random.hpp"

namespace ddg {

void GroupSpec::validate() const {
  if (num_groups < 2) throw ConfigError("groups must be at least 2");
  if (selected_group < 0 || selected_group >= num_groups) {
    throw ConfigError("selected group " + std::to_string(selected_group) + " outside [0, " +
                      std::to_string(num_groups) + ")");
  }
}

void OverrideSpec::validate() const {
  if (budget && !(*budget > 0.0 && *budget <= 1.0)) throw ConfigError("override budget must lie in (0, 1]");
  if (!std::isfinite(beta1) || !std::isfinite(beta2)) throw ConfigError("beta1 and beta2 must be finite");
}

std::vector<int> partition_groups(std::span<const double> confidences, int num_groups) {
  if (num_groups < 1) throw ConfigError("groups must be at least 1");
  const std::size_t b = confidences.size();
  const auto g = static_cast<std::size_t>(num_groups);
  if (b < g) {
    throw ValidationError("cannot split a batch of " + std::to_string(b) + " into " + std::to_string(g) + " groups");
  }
  std::vector<std::size_t> order(b);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t c) { return confidences[a] > confidences[c]; });
  std::vector<int> groups(b);
  const std::size_t base = b / g, extra = b % g;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < g; ++k) {
    const std::size_t len = base + (k < extra);
    for (std::size_t m = 0; m < len; ++m) groups[order[pos++]] = static_cast<int>(k);
  }
  return groups;
}

BudgetVector apply_budget_override(const BudgetVector& budgets, std::span<const int> groups, const GroupSpec& group,
                                   const OverrideSpec& spec) {
  if (groups.size() != budgets.size()) throw ValidationError("budget override: one group per sample required");
  if (!spec.budget) return budgets;
  std::vector<double> xi = budgets.xi;
  for (std::size_t i = 0; i < xi.size(); ++i) {
    if (groups[i] == group.selected_group) xi[i] = *spec.budget;
  }
  return BudgetVector::from_values(std::move(xi));
}

SupervisionMatrix apply_label_override(const SupervisionMatrix& targets, const Matrix& probs,
                                       std::span<const int> labels, std::span<const int> groups,
                                       const GroupSpec& group, const OverrideSpec& spec) {
  if (groups.size() != targets.rows() || labels.size() != targets.rows() || probs.rows() != targets.rows() ||
      probs.cols() != targets.cols()) {
    throw ValidationError("label override: targets, probabilities, labels and groups disagree in size");
  }
  SupervisionMatrix out = targets;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    if (groups[i] != group.selected_group) continue;
    out(i, labels[i]) += spec.beta1;
    out(i, most_probable_incorrect(probs.row(i), labels[i])) += spec.beta2;
  }
  return out;
}

GroupOverrideHook::GroupOverrideHook(GroupSpec group, OverrideSpec spec) : group_(group), spec_(spec) {
  group_.validate();
  spec_.validate();
}

void GroupOverrideHook::on_confidences(std::span<const double> confidences) {
  // A ragged final batch too small to split is left alone.
  if (confidences.size() < static_cast<std::size_t>(group_.num_groups)) {
    groups_.assign(confidences.size(), -1);
    return;
  }
  groups_ = partition_groups(confidences, group_.num_groups);
  overridden_ += static_cast<std::size_t>(std::count(groups_.begin(), groups_.end(), group_.selected_group));
}

void GroupOverrideHook::adjust_budgets(BudgetVector& budgets) {
  budgets = apply_budget_override(budgets, groups_, group_, spec_);
}

void GroupOverrideHook::adjust_targets(SupervisionMatrix& targets, std::span<const int> labels,
                                       const Matrix& adv_probs) {
  if (spec_.beta1 == 0.0 && spec_.beta2 == 0.0) return;
  targets = apply_label_override(targets, adv_probs, labels, groups_, group_, spec_);
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    const auto a = cur.find_first_not_of(" \t");
    const auto b = cur.find_last_not_of(" \t");
    out.push_back(a == std::string::npos ? "" : cur.substr(a, b - a + 1));
  }
  return out;
}

double parse_number(const std::string& text) {
  const auto slash = text.find('/');
  try {
    std::size_t used = 0;
    if (slash == std::string::npos) {
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    }
    const std::string num = text.substr(0, slash), den = text.substr(slash + 1);
    std::size_t u1 = 0, u2 = 0;
    const double n = std::stod(num, &u1), d = std::stod(den, &u2);
    if (u1 != num.size() || u2 != den.size() || d == 0.0) throw std::invalid_argument(text);
    return n / d;
  } catch (const std::exception&) {
    throw ConfigError("sweep: '" + text + "' is not a number or fraction");
  }
}

std::string format_value(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

std::vector<SweepEntry> parse_sweep(const std::string& text) {
  if (text.find_first_not_of(" \t;") == std::string::npos) return {};
  int num_groups = 4;
  std::vector<int> selected;
  bool select_all = true;
  std::vector<std::optional<double>> budgets{std::nullopt};
  std::vector<double> beta1{0.0}, beta2{0.0};
  bool baseline = false;

  for (const auto& item : split(text, ';')) {
    if (item.empty()) continue;
    if (item == "baseline") {
      baseline = true;
      continue;
    }
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("sweep: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    const auto values = split(value, ',');
    if (values.empty()) throw ConfigError("sweep: key '" + key + "' has no values");
    if (key == "groups") {
      const double g = parse_number(value);
      if (g != std::floor(g) || g < 2) throw ConfigError("sweep: groups must be an integer of at least 2");
      num_groups = static_cast<int>(g);
    } else if (key == "select") {
      if (value == "all") {
        select_all = true;
      } else {
        select_all = false;
        selected.clear();
        for (const auto& v : values) selected.push_back(static_cast<int>(parse_number(v)));
      }
    } else if (key == "budget") {
      budgets.clear();
      for (const auto& v : values) budgets.emplace_back(parse_number(v));
    } else if (key == "beta1") {
      beta1.clear();
      for (const auto& v : values) beta1.push_back(parse_number(v));
    } else if (key == "beta2") {
      beta2.clear();
      for (const auto& v : values) beta2.push_back(parse_number(v));
    } else {
      throw ConfigError("sweep: unknown key '" + key + "' (expected groups, select, budget, beta1, beta2, baseline)");
    }
  }
  if (select_all) {
    selected.resize(static_cast<std::size_t>(num_groups));
    std::iota(selected.begin(), selected.end(), 0);
  }

  std::vector<SweepEntry> entries;
  if (baseline) {
    SweepEntry e;
    e.label = "baseline";
    e.baseline = true;
    e.group.num_groups = num_groups;
    entries.push_back(e);
  }
  for (int g : selected) {
    for (const auto& b : budgets) {
      for (double p : beta1) {
        for (double n : beta2) {
          SweepEntry e;
          e.group = {num_groups, g};
          e.override_spec.budget = b;
          e.override_spec.beta1 = p;
          e.override_spec.beta2 = n;
          e.group.validate();
          e.override_spec.validate();
          std::string label = "G" + std::to_string(num_groups) + "-g" + std::to_string(g);
          if (b) label += "-budget" + format_value(*b * 255.0);
          if (p != 0.0) label += "-beta1_" + format_value(p);
          if (n != 0.0) label += "-beta2_" + format_value(n);
          e.label = label;
          entries.push_back(e);
        }
      }
    }
  }
  if (entries.empty()) throw ConfigError("sweep: no runs selected");
  return entries;
}

std::vector<SweepRunResult> run_sweep(const SweepContext& context, const std::vector<SweepEntry>& entries,
                                      const std::function<void(const SweepRunResult&)>& on_done) {
  if (!context.train || !context.holdout) throw ConfigError("sweep: training and holdout data are required");
  if (context.workers < 1) throw ConfigError("sweep: workers must be at least 1");
  std::vector<SweepRunResult> results(entries.size());
  std::atomic<std::size_t> next{0};
  std::mutex done_mutex;

  auto work = [&] {
    for (std::size_t k = next++; k < entries.size(); k = next++) {
      SweepRunResult& r = results[k];
      r.entry = entries[k];
      try {
        auto model = make_classifier<float>(context.architecture, derive_seed(context.seed, "model"));
        std::optional<GroupOverrideHook> hook;
        TrainOptions options;
        options.seed = context.seed;
        options.eval_attacks = context.eval_attacks;
        options.eval_limit = context.eval_limit;
        options.eval_batch_size = context.eval_batch_size;
        if (!r.entry.baseline) {
          hook.emplace(r.entry.group, r.entry.override_spec);
          options.hook = &*hook;
        }
        Trainer trainer(model, *context.train, *context.holdout, context.plan, context.guidance, options);
        r.history = trainer.run().history;
        r.catastrophic_overfitting =
            std::any_of(r.history.begin(), r.history.end(), [](const MetricsRecord& m) { return m.co_flag; });
      } catch (const std::exception& e) {
        r.failed = true;
        r.error = e.what();
      }
      if (on_done) {
        std::lock_guard lock(done_mutex);
        on_done(r);
      }
    }
  };

  const auto n = std::min<std::size_t>(static_cast<std::size_t>(context.workers), entries.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return results;
}

}  // namespace ddg
