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

// Acceptance checks. Run with no argument for every criterion, or with one
// criterion name. Prints one PASS/FAIL line per criterion; exits 1 on any FAIL.

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddg/architectures.hpp"
#include "ddg/attacks.hpp"
#include "ddg/classifier.hpp"
#include "ddg/data.hpp"
#include "ddg/guidance.hpp"
#include "ddg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ddg;

namespace {

constexpr double k255 = 255.0;

// Pinned tolerances.
constexpr double kBudgetTolerance = 1e-6 / k255;
constexpr double kRowSumTolerance = 1e-9;
constexpr int kAlgebraCases = 10000;
constexpr double kCnnGradientTolerance = 1e-4;
constexpr double kLinearGradientTolerance = 1e-6;
constexpr double kAttackLossSlack = 1e-9;
constexpr double kStepContainment = 1e-9;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- budgets ----

BudgetVector default_budgets() {
  constexpr std::size_t kBatch = 128;
  ConfidenceRank r;
  for (std::size_t i = 0; i < kBatch; ++i) {
    r.confidences.push_back(static_cast<double>(i + 1) / (kBatch + 1));
    r.ranks.push_back(static_cast<int>(i) + 1);
  }
  return allocate_budgets(r, GuidanceConfig{}, kBatch);
}

Verdict budget_endpoint(double observed, double expected) {
  const double off = std::abs(observed - expected);
  return {off <= kBudgetTolerance, "observed " + fmt("%.9f", observed * k255) + "/255, off by " +
                                       fmt("%.3g", off * k255) + "/255, allowed " + fmt("%.3g", kBudgetTolerance * k255) +
                                       "/255"};
}

Verdict budget_min() { return budget_endpoint(default_budgets().xi_min, 4.0 / k255); }
Verdict budget_max() { return budget_endpoint(default_budgets().xi_max, 12.0 / k255); }

// ---- supervision algebra ----

Verdict supervision_algebra() {
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 2.0);
  double worst = 0.0;
  std::size_t misclassified_rows = 0;
  for (int trial = 0; trial < kAlgebraCases; ++trial) {
    GuidanceConfig cfg;
    cfg.gamma = 1.0 - unit(rng);  // (0, 1]
    const int l = 2 + static_cast<int>(rng() % 99);
    cfg.num_classes = l;
    const std::size_t b = 1 + rng() % 64;
    const std::size_t correct = rng() % (b + 1);

    std::vector<int> labels(b);
    Matrix logits(b, l);
    for (std::size_t i = 0; i < b; ++i) {
      labels[i] = static_cast<int>(rng() % l);
      for (int c = 0; c < l; ++c) logits(i, c) = z(rng);
      int top = 0;
      for (int c = 1; c < l; ++c) top = logits(i, c) > logits(i, top) ? c : top;
      const bool want_correct = i < correct;
      if (want_correct && top != labels[i]) std::swap(logits(i, top), logits(i, labels[i]));
      if (!want_correct && top == labels[i]) std::swap(logits(i, top), logits(i, (labels[i] + 1) % l));
    }
    const Matrix probs = softmax(logits);
    const double acc = static_cast<double>(correct) / static_cast<double>(b);

    const Matrix relaxed = relax_labels(labels, cfg.gamma, l);
    const Matrix adjusted = adjust_supervision(relaxed, labels, probs, cfg);
    for (std::size_t i = 0; i < b; ++i) {
      worst = std::max(worst, std::abs(relaxed.row_sum(i) - 1.0));
      const double expected = i < correct ? 1.0 : 1.0 + cfg.gamma * (1.0 - acc) - 1.0 / l;
      worst = std::max(worst, std::abs(adjusted.row_sum(i) - expected));
      misclassified_rows += i >= correct;
    }
  }
  return {worst <= kRowSumTolerance, std::to_string(kAlgebraCases) + " cases, " + std::to_string(misclassified_rows) +
                                         " misclassified rows, max row-sum error " + fmt("%.3g", worst)};
}

// ---- gradient oracle ----

double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double num = 0.0, den = 1e-12;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    num = std::max(num, std::abs(analytic[k] - numeric[k]));
    den = std::max(den, std::abs(numeric[k]));
  }
  return num / den;
}

template <typename F>
double central_difference(double& v, F&& f) {
  constexpr double h = 1e-6;
  const double orig = v;
  v = orig + h;
  const double up = f();
  v = orig - h;
  const double down = f();
  v = orig;
  return (up - down) / (2.0 * h);
}

struct GradientErrors {
  double input = 0.0;
  double loss = 0.0;
};

GradientErrors gradient_errors(const ArchitectureSpec& spec, std::uint64_t seed) {
  constexpr std::size_t kBatch = 4;
  auto model = make_classifier<double>(spec, seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pixel(0.05, 0.95);
  Tensor<double> x({kBatch, spec.input.channels, spec.input.height, spec.input.width});
  for (auto& v : x.values()) v = pixel(rng);
  Tensor<double> x_adv = x;
  std::uniform_real_distribution<double> shift(-8.0 / k255, 8.0 / k255);
  for (auto& v : x_adv.values()) v = std::clamp(v + shift(rng), 0.0, 1.0);
  std::vector<int> labels(kBatch);
  for (auto& y : labels) y = static_cast<int>(rng() % spec.num_classes);

  GuidanceConfig cfg;
  cfg.num_classes = spec.num_classes;
  const Matrix soft = relax_labels(labels, cfg.gamma, spec.num_classes);

  auto soft_ce = [&] {
    const Matrix p = predict_probabilities(model, x);
    double s = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
      for (std::size_t c = 0; c < p.cols(); ++c) s -= soft(i, c) * std::log(p(i, c));
    }
    return s;
  };
  const Tensor<double> g = model.input_gradient(x, soft);
  std::vector<double> analytic(g.values().begin(), g.values().end()), numeric;
  for (std::size_t k = 0; k < x.size(); ++k) numeric.push_back(central_difference(x[k], soft_ce));
  GradientErrors out;
  out.input = relative_error(analytic, numeric);

  // Full objective through both passes, in the modes training uses.
  ForwardTrace<double> init_trace, adv_trace;
  const Matrix init_logits = to_matrix(model.forward(x, Mode::kTrainFrozenStats, &init_trace));
  const Matrix adv_logits = to_matrix(model.forward(x_adv, Mode::kTrain, &adv_trace));
  const Matrix adv_probs = softmax(adv_logits);
  const SupervisionMatrix targets = adjust_supervision(soft, labels, adv_probs, cfg);
  std::vector<double> weights(kBatch);
  for (std::size_t i = 0; i < kBatch; ++i) weights[i] = 1.0 + 0.7 * static_cast<double>(i);
  auto grads = model.zero_gradients();
  guided_loss_backward(model, adv_trace, adv_logits, init_trace, init_logits, targets, weights, grads);

  auto objective = [&] {
    const Matrix a = softmax(to_matrix(model.forward(x_adv, Mode::kTrain)));
    const Matrix b = softmax(to_matrix(model.forward(x, Mode::kTrainFrozenStats)));
    return total_loss(a, b, targets, weights).total();
  };
  analytic.clear();
  numeric.clear();
  auto params = model.parameters();
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t k = 0; k < params[t]->size(); ++k) {
      numeric.push_back(central_difference((*params[t])[k], objective));
      analytic.push_back(grads[t][k]);
    }
  }
  out.loss = relative_error(analytic, numeric);
  return out;
}

Verdict gradient_oracle() {
  const auto cnn = gradient_errors({"tiny-cnn", {3, 8, 8}, 4, 4}, 3);
  const auto lin = gradient_errors({"linear", {3, 4, 4}, 5, 0}, 4);
  const bool pass = cnn.input < kCnnGradientTolerance && cnn.loss < kCnnGradientTolerance &&
                    lin.input < kLinearGradientTolerance && lin.loss < kLinearGradientTolerance;
  return {pass, "tiny-cnn input " + fmt("%.2e", cnn.input) + " loss " + fmt("%.2e", cnn.loss) + " (< " +
                    fmt("%.0e", kCnnGradientTolerance) + "), linear input " + fmt("%.2e", lin.input) + " loss " +
                    fmt("%.2e", lin.loss) + " (< " + fmt("%.0e", kLinearGradientTolerance) + ")"};
}

// ---- attack oracle ----

// Reference scorer for linear_margin data: z = W x with the published weights,
// computed here without the classifier code.
struct ReferenceScorer {
  Matrix w;
  std::vector<double> scores(std::span<const double> x) const {
    std::vector<double> z(w.rows(), 0.0);
    for (std::size_t c = 0; c < w.rows(); ++c) {
      for (std::size_t k = 0; k < x.size(); ++k) z[c] += w(c, k) * x[k];
    }
    return z;
  }
  double cross_entropy(std::span<const double> x, int y) const {
    const auto z = scores(x);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s) - z[y];
  }
  // Single signed step of size eps from x, clipped to [0, 1].
  std::vector<double> fgsm(std::span<const double> x, int y, double eps) const {
    const auto z = scores(x);
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double s = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) s += p[c] = std::exp(z[c] - m);
    for (auto& v : p) v /= s;
    std::vector<double> out(x.begin(), x.end());
    for (std::size_t k = 0; k < x.size(); ++k) {
      double g = 0.0;
      for (std::size_t c = 0; c < p.size(); ++c) g += (p[c] - (static_cast<int>(c) == y)) * w(c, k);
      const double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
      out[k] = std::clamp(x[k] + eps * sign, 0.0, 1.0);
    }
    return out;
  }
  bool correct(std::span<const double> x, int y) const {
    const auto z = scores(x);
    for (std::size_t c = 0; c < z.size(); ++c) {
      if (static_cast<int>(c) != y && z[c] >= z[y]) return false;
    }
    return true;
  }
};

Verdict attack_oracle() {
  SyntheticOptions o;
  o.size = 120;
  o.num_classes = 6;
  o.geometry = Geometry::kLinearMargin;
  o.shape = {1, 6, 6};
  o.margin = 0.02;
  o.jitter = 0.01;
  o.seed = 91;
  const IndexedDataset data = make_synthetic(o);

  ReferenceScorer ref{linear_margin_weights(o.shape, o.num_classes)};
  auto model = make_classifier<double>({"linear", o.shape, o.num_classes, 0}, 0);
  auto params = model.parameters();
  for (std::size_t k = 0; k < params[0]->size(); ++k) (*params[0])[k] = ref.w.values()[k];
  params[1]->fill(0.0);

  std::vector<std::size_t> rows(data.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const Batch batch = make_batch(data, rows);
  const Tensor<double> x = batch.images.cast<double>();
  const std::size_t d = o.shape.size();
  std::vector<std::uint64_t> seeds(data.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = 1000 + i;

  std::ostringstream detail;
  bool pass = true;
  double worst_gap = 0.0;
  // Below the margin, between margin and margin + jitter, and above both.
  for (double eps : {4.0 / k255, 0.0199, 0.025, 8.0 / k255}) {
    const auto pgd = run_attack(model, x, batch.labels, parse_attack("pgd10", eps), seeds);
    std::size_t oracle_correct = 0, pgd_correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::span<const double> xi(x.values().data() + i * d, d);
      const auto vertex = ref.fgsm(xi, batch.labels[i], eps);
      const std::span<const double> adv(pgd.adv_inputs.values().data() + i * d, d);
      const double gap = ref.cross_entropy(vertex, batch.labels[i]) - ref.cross_entropy(adv, batch.labels[i]);
      worst_gap = std::max(worst_gap, gap);
      if (gap > kAttackLossSlack) pass = false;
      oracle_correct += ref.correct(vertex, batch.labels[i]);
      pgd_correct += !pgd.success[i];
    }
    EvalOptions eo;
    eo.seed = 3;
    eo.batch_size = 32;
    const auto report = evaluate_robustness(model, data, parse_attacks({"pgd10"}, eps), eo);
    const double oracle_acc = static_cast<double>(oracle_correct) / static_cast<double>(data.size());
    const double expected = eps < o.margin ? 1.0 : oracle_acc;
    const double measured = report.accuracy("pgd10");
    if (eps < o.margin && oracle_acc != 1.0) pass = false;
    if (measured != expected || report.clean_accuracy != 1.0) pass = false;
    if (static_cast<double>(pgd_correct) / static_cast<double>(data.size()) != expected) pass = false;
    detail << fmt("eps %.4f", eps) << " pgd10 " << measured << " expected " << expected << "; ";
  }
  detail << "max closed-form loss excess " << fmt("%.2e", worst_gap);
  return {pass, detail.str()};
}

// ---- guided step floor ----

template <typename T>
bool guided_step_case(std::mt19937_64& rng, double& worst_excess) {
  constexpr std::size_t kBatch = 16;
  const InputShape shape{3, 4, 4};
  const double small = 4.0 / k255, base = 8.0 / k255;
  std::uniform_real_distribution<double> unit(0.0, 1.0), init(-small, small), grad(-1.0, 1.0);
  Tensor<T> x({kBatch, shape.channels, shape.height, shape.width});
  Tensor<T> delta0(x.shape()), g(x.shape());
  for (auto& v : x.values()) v = static_cast<T>(0.1 + 0.8 * unit(rng));
  for (auto& v : delta0.values()) v = static_cast<T>(init(rng));
  for (auto& v : g.values()) v = static_cast<T>(grad(rng));
  const auto out = ddg_perturb(x, delta0, g, BudgetVector::uniform(kBatch, small), base);

  bool ok = true;
  bool step_observed = false;
  const T bound = floor_to<T>(small);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double sign = g[k] > 0 ? 1.0 : (g[k] < 0 ? -1.0 : 0.0);
    const double with_floor = std::clamp(static_cast<double>(delta0[k]) + base * sign, -small, small);
    const double with_own = std::clamp(static_cast<double>(delta0[k]) + small * sign, -small, small);
    const T got = out.deltas[k];
    // The float path clips to the largest float not above the budget.
    const double expected = std::clamp(with_floor, -static_cast<double>(bound), static_cast<double>(bound));
    if (std::abs(static_cast<double>(got) - expected) > 1e-6 / k255) ok = false;
    if (std::abs(with_floor - with_own) > 1e-3 / k255) step_observed = true;
    worst_excess = std::max(worst_excess, std::abs(static_cast<double>(got)) - small);
    if (std::abs(static_cast<double>(got)) > small + kStepContainment) ok = false;
  }
  return ok && step_observed;
}

Verdict guided_step_floor() {
  std::mt19937_64 rng(55);
  double worst_excess = -1.0;
  bool pass = true;
  for (int trial = 0; trial < 200; ++trial) {
    pass = guided_step_case<double>(rng, worst_excess) && pass;
    pass = guided_step_case<float>(rng, worst_excess) && pass;
  }
  return {pass, "400 random batches at budget 4/255: step 8/255, max |delta| - 4/255 = " +
                    fmt("%.3g", worst_excess)};
}

// ---- ablation equivalence ----

Verdict ablation_equivalence() {
  SyntheticOptions o;
  o.size = 160;
  o.num_classes = 4;
  o.shape = {3, 8, 8};
  o.seed = 21;
  o.sigma = 0.2;
  const auto [train, holdout] = split_holdout(make_synthetic(o), 0.2, 5);
  const ArchitectureSpec arch{"tiny-cnn", o.shape, o.num_classes, 4};

  GuidanceConfig g;
  g.num_classes = o.num_classes;
  g.kappa = 0.0;
  g.gamma = 1.0;
  g.lambda_w = 0.0;
  g.alpha_w = 0.0;
  TrainPlan plan;
  plan.epochs = 1;
  plan.batch_size = 32;
  plan.milestones = {};
  plan.augment = false;
  TrainPlan guided = plan;
  guided.trainer = TrainerKind::kDdg;
  guided.disable_ssa = guided.disable_gs = true;
  TrainPlan uniform = plan;
  uniform.trainer = TrainerKind::kUniformGuidance;

  TrainOptions options;
  options.seed = 17;
  options.eval_attacks = parse_attacks({"fgsm", "pgd10"});
  auto m1 = make_classifier<float>(arch, 9);
  auto m2 = make_classifier<float>(arch, 9);
  const auto a = train_ddg(m1, train, holdout, guided, g, options).history.at(0).to_json().dump();
  const auto b = train_baseline(m2, train, holdout, uniform, g, options).history.at(0).to_json().dump();
  return {a == b, a == b ? "first-epoch records identical: " + a : "records differ:\n  " + a + "\n  " + b};
}

// ---- reproducibility ----

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int run_cli(const std::vector<std::string>& args, const fs::path& log) {
  std::string cmd = std::string("'") + DDG_CLI_PATH + "'";
  for (const auto& a : args) cmd += " '" + a + "'";
  cmd += " >'" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ddg_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_small_config(const fs::path& dir) {
  const json doc = json::parse(R"({
    "data": {"kind": "synthetic", "holdout_fraction": 0.25,
             "synthetic": {"train_size": 96, "test_size": 32, "num_classes": 4, "height": 8, "width": 8}},
    "model": {"architecture": "tiny-cnn", "width": 4},
    "train": {"epochs": 2, "batch_size": 24, "milestones": []},
    "eval": {"attacks": ["fgsm"]}
  })");
  const fs::path p = dir / "config.json";
  std::ofstream(p) << doc.dump(2);
  return p;
}

Verdict reproducibility_train() {
  const fs::path dir = fresh_dir("train");
  const fs::path cfg = write_small_config(dir);
  for (const char* run : {"a", "b"}) {
    const int code = run_cli({"train", cfg.string(), "--seed", "3", "--output", (dir / run).string()}, dir / "log.txt");
    if (code != 0) return {false, "train exited with " + std::to_string(code) + ": " + read_file(dir / "log.txt")};
  }
  const std::string a = read_file(dir / "a" / "metrics.jsonl");
  const bool pass = !a.empty() && a == read_file(dir / "b" / "metrics.jsonl");
  return {pass, "metrics.jsonl " + std::to_string(a.size()) + " bytes, " + (pass ? "identical" : "different")};
}

Verdict reproducibility_ablate() {
  const fs::path dir = fresh_dir("ablate");
  const fs::path cfg = write_small_config(dir);
  for (const char* run : {"a", "b"}) {
    const int code = run_cli({"ablate", cfg.string(), "--sweep", "groups=2;select=all;budget=16/255;baseline", "--set",
                              "train.epochs=2", "--seed", "3", "--output", (dir / run).string()},
                             dir / "log.txt");
    if (code != 0) return {false, "ablate exited with " + std::to_string(code) + ": " + read_file(dir / "log.txt")};
  }
  std::vector<fs::path> streams{"sweep_records.jsonl"};
  for (const auto& entry : fs::directory_iterator(dir / "a" / "runs")) {
    streams.push_back(fs::path("runs") / entry.path().filename() / "metrics.jsonl");
  }
  std::sort(streams.begin(), streams.end());
  std::size_t bytes = 0;
  for (const auto& rel : streams) {
    const std::string a = read_file(dir / "a" / rel);
    if (a.empty() || a != read_file(dir / "b" / rel)) return {false, rel.string() + " differs between repeats"};
    bytes += a.size();
  }
  return {streams.size() == 4, std::to_string(streams.size()) + " streams, " + std::to_string(bytes) +
                                   " bytes, identical"};
}

struct Criterion {
  const char* name;
  const char* title;
  std::function<Verdict()> check;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> list{
      {"budget_min", "minimum default budget is 4/255", budget_min},
      {"budget_max", "maximum default budget is 12/255", budget_max},
      {"supervision_algebra", "target row sums", supervision_algebra},
      {"gradient_oracle", "analytic gradients match finite differences", gradient_oracle},
      {"attack_oracle", "attacks on linear-margin data", attack_oracle},
      {"guided_step_floor", "guided step uses max(budget, base) and stays in the budget", guided_step_floor},
      {"ablation_equivalence", "inert guidance equals the uniform baseline", ablation_equivalence},
      {"reproducibility_train", "repeated train runs give identical metrics", reproducibility_train},
      {"reproducibility_ablate", "repeated ablate runs give identical metrics", reproducibility_ablate},
  };
  return list;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string only = argc > 1 ? argv[1] : "";
  bool any = false, all_pass = true;
  for (const auto& c : criteria()) {
    if (!only.empty() && only != c.name) continue;
    any = true;
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all_pass = all_pass && v.pass;
    std::cout << (v.pass ? "PASS " : "FAIL ") << c.name << " (" << c.title << "): " << v.detail << std::endl;
  }
  if (!any) {
    std::cerr << "unknown criterion '" << only << "'; known:";
    for (const auto& c : criteria()) std::cerr << " " << c.name;
    std::cerr << "\n";
    return 2;
  }
  return all_pass ? 0 : 1;
}
