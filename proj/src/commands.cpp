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

#include "ddg/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>

#include "ddg/ablation.hpp"
#include "ddg/checkpoint.hpp"
#include "ddg/errors.hpp"
#include "ddg/metrics_io.hpp"
#include "ddg/plot.hpp"
#include "ddg/random.hpp"

namespace ddg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string over_255(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g/255", v * 255.0);
  return buf;
}

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

fs::path cifar_dir(const RunConfig& c) {
  if (!c.data.path.empty()) return c.data.path;
  const char* env = std::getenv("DDG_CIFAR10_DIR");
  if (env && *env) return env;
  throw ConfigError("data.path is empty and DDG_CIFAR10_DIR is not set");
}

std::optional<std::size_t> limit_of(std::size_t n) {
  if (n == 0) return std::nullopt;
  return n;
}

IndexedDataset head(const IndexedDataset& data, std::size_t limit) {
  if (limit == 0 || limit >= data.size()) return data;
  std::vector<std::size_t> rows(limit);
  for (std::size_t i = 0; i < limit; ++i) rows[i] = i;
  return subset(data, rows);
}

// Input shape and class count come from the data actually loaded.
RunConfig bind_to_data(RunConfig c, const IndexedDataset& data) {
  c.model.input = data.shape;
  c.model.num_classes = data.num_classes;
  c.guidance.num_classes = data.num_classes;
  return c;
}

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

std::string progress_line(const MetricsRecord& m, int epochs) {
  std::string s = "epoch " + std::to_string(m.epoch) + "/" + std::to_string(epochs) + "  lr " +
                  fixed(m.learning_rate, 4) + "  loss " + fixed(m.train_loss, 4) + "  train " +
                  percent(m.train_accuracy) + "%";
  if (!std::isnan(m.clean_accuracy)) s += "  clean " + percent(m.clean_accuracy) + "%";
  for (const auto& [name, acc] : m.robust) s += "  " + name + " " + percent(acc) + "%";
  if (m.co_flag) s += "  [CO]";
  return s;
}

CheckpointManifest manifest_for(const RunConfig& c, const std::string& tag, const std::vector<MetricsRecord>& history,
                                int epoch) {
  CheckpointManifest m;
  m.architecture = c.model;
  m.tag = tag;
  m.epoch = epoch;
  m.learning_rate = c.train.learning_rate_at(std::max(epoch, 1));
  m.momentum = c.train.momentum;
  m.weight_decay = c.train.weight_decay;
  for (const auto& r : history) {
    if (r.epoch == epoch) m.metrics = r.to_json();
  }
  return m;
}

// "clean" first, then attacks by name, matching the key order of stored records.
std::vector<std::string> metric_names(const std::vector<MetricsRecord>& history) {
  std::set<std::string> attacks;
  for (const auto& m : history) {
    for (const auto& [name, acc] : m.robust) attacks.insert(name);
  }
  std::vector<std::string> names{"clean"};
  names.insert(names.end(), attacks.begin(), attacks.end());
  return names;
}

double metric_value(const MetricsRecord& m, const std::string& name) {
  if (name == "clean") return m.clean_accuracy;
  return m.robust_accuracy(name).value_or(std::numeric_limits<double>::quiet_NaN());
}

Series metric_series(const std::string& label, const std::vector<MetricsRecord>& history, const std::string& metric) {
  Series s;
  s.label = label;
  for (const auto& m : history) {
    s.x.push_back(m.epoch);
    s.y.push_back(100.0 * metric_value(m, metric));
  }
  return s;
}

json sweep_record(const SweepRunResult& r) {
  const auto& e = r.entry;
  return {{"label", e.label},
          {"baseline", e.baseline},
          {"num_groups", e.group.num_groups},
          {"group", e.group.selected_group},
          {"budget", e.override_spec.budget ? json(*e.override_spec.budget) : json(nullptr)},
          {"beta1", e.override_spec.beta1},
          {"beta2", e.override_spec.beta2},
          {"failed", r.failed},
          {"error", r.error},
          {"epochs", r.history.size()},
          {"co", r.catastrophic_overfitting}};
}

SweepRunResult sweep_result_from(const json& j) {
  SweepRunResult r;
  try {
    r.entry.label = j.at("label").get<std::string>();
    r.entry.baseline = j.at("baseline").get<bool>();
    r.entry.group.num_groups = j.at("num_groups").get<int>();
    r.entry.group.selected_group = j.at("group").get<int>();
    if (!j.at("budget").is_null()) r.entry.override_spec.budget = j.at("budget").get<double>();
    r.entry.override_spec.beta1 = j.at("beta1").get<double>();
    r.entry.override_spec.beta2 = j.at("beta2").get<double>();
    r.failed = j.at("failed").get<bool>();
    r.error = j.at("error").get<std::string>();
    r.catastrophic_overfitting = j.at("co").get<bool>();
  } catch (const json::exception& e) {
    throw IngestionError(std::string("malformed sweep record: ") + e.what());
  }
  return r;
}

Table sweep_summary(const std::vector<SweepRunResult>& results) {
  std::vector<std::string> metrics{"clean"};
  for (const auto& r : results) {
    for (const auto& n : metric_names(r.history)) {
      if (std::find(metrics.begin(), metrics.end(), n) == metrics.end()) metrics.push_back(n);
    }
  }
  Table t;
  t.headers = {"run", "group", "budget", "beta1", "beta2", "status"};
  for (const auto& m : metrics) t.headers.push_back("final_" + m + "(%)");
  t.headers.push_back("best_pgd10(%)");
  t.headers.push_back("co");
  for (const auto& r : results) {
    const auto& e = r.entry;
    std::vector<std::string> row{e.label,
                                 e.baseline ? "-" : std::to_string(e.group.selected_group) + "/" +
                                                        std::to_string(e.group.num_groups),
                                 e.override_spec.budget ? over_255(*e.override_spec.budget) : "-",
                                 short_number(e.override_spec.beta1),
                                 short_number(e.override_spec.beta2),
                                 r.failed ? "failed" : "ok"};
    for (const auto& m : metrics) row.push_back(r.history.empty() ? "-" : percent(metric_value(r.history.back(), m)));
    double best = std::numeric_limits<double>::quiet_NaN();
    for (const auto& h : r.history) {
      const double v = metric_value(h, "pgd10");
      if (!std::isnan(v) && !(v <= best)) best = v;
    }
    row.push_back(percent(best));
    row.push_back(r.catastrophic_overfitting ? "yes" : "no");
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_run_artifacts(const fs::path& dir, const std::string& label, const std::vector<MetricsRecord>& history) {
  JsonlWriter metrics(dir / "metrics.jsonl");
  JsonlWriter timing(dir / "timing.jsonl");
  for (const auto& m : history) {
    metrics.write(m.to_json());
    timing.write({{"epoch", m.epoch}, {"seconds", m.wallclock_seconds}});
  }
  metrics_table(history).save(dir / "trajectory");
  std::vector<Series> curves;
  for (const auto& name : metric_names(history)) curves.push_back(metric_series(name, history, name));
  ChartOptions opts;
  opts.title = label;
  opts.y_min = 0.0;
  opts.y_max = 100.0;
  write_text_file(dir / "curves.svg", render_line_chart(curves, opts));
}

}  // namespace

DataBundle load_data(const RunConfig& c, bool want_train, bool want_test) {
  DataBundle out;
  IndexedDataset full_train;
  if (c.data.kind == "cifar10") {
    const fs::path dir = cifar_dir(c);
    if (want_train) full_train = load_cifar10(dir, Split::kTrain, limit_of(c.data.train_limit));
    if (want_test) out.test = load_cifar10(dir, Split::kTest, limit_of(c.data.test_limit));
  } else if (c.data.kind == "synthetic") {
    const auto& s = c.data.synthetic;
    SyntheticOptions o;
    o.size = s.train_size + s.test_size;
    o.num_classes = s.num_classes;
    o.geometry = s.geometry;
    o.seed = s.seed;
    o.shape = s.shape;
    o.margin = s.margin;
    o.jitter = s.jitter;
    o.sigma = s.sigma;
    const IndexedDataset all = make_synthetic(o);
    std::vector<std::size_t> train_rows(s.train_size), test_rows(s.test_size);
    for (std::size_t i = 0; i < s.train_size; ++i) train_rows[i] = i;
    for (std::size_t i = 0; i < s.test_size; ++i) test_rows[i] = s.train_size + i;
    full_train = head(subset(all, train_rows), c.data.train_limit);
    out.test = head(subset(all, test_rows), c.data.test_limit);
    full_train.split = Split::kTrain;
    out.test.split = Split::kTest;
  } else {
    if (want_train) full_train = head(load_dataset(c.data.path), c.data.train_limit);
    if (want_test) {
      if (c.data.test_path.empty()) throw ConfigError("data.test_path is required to evaluate a file dataset");
      out.test = head(load_dataset(c.data.test_path), c.data.test_limit);
    }
  }
  if (want_train) {
    if (c.data.holdout_fraction > 0.0) {
      auto [train, holdout] = split_holdout(full_train, c.data.holdout_fraction, derive_seed(c.seed, "holdout"));
      out.train = std::move(train);
      out.holdout = std::move(holdout);
    } else {
      out.train = std::move(full_train);
    }
  }
  if (!want_test) out.test = IndexedDataset{};
  return out;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
  config.validate();
  const DataBundle data = load_data(config, true, false);
  const RunConfig c = bind_to_data(config, data.train);
  const fs::path dir = c.run_dir();
  fs::create_directories(dir / "checkpoints");
  write_json(dir / "config.resolved.json", c.to_json());

  out << "training " << to_string(c.train.trainer) << " on " << data.train.size() << " examples (" << data.holdout.size()
      << " held out) into " << dir.string() << "\n";

  auto model = make_classifier<float>(c.model, derive_seed(c.seed, "model"));
  JsonlWriter metrics(dir / "metrics.jsonl");
  JsonlWriter timing(dir / "timing.jsonl");
  TrainOptions options;
  options.seed = c.seed;
  options.eval_attacks = parse_attacks(c.eval.attacks, c.eval.epsilon);
  options.eval_limit = c.eval.limit;
  options.eval_batch_size = c.eval.batch_size;
  options.on_epoch = [&](const MetricsRecord& m) {
    metrics.write(m.to_json());
    timing.write({{"epoch", m.epoch}, {"seconds", m.wallclock_seconds}});
    out << progress_line(m, c.train.epochs) << std::endl;
  };

  const TrainResult result = c.train.trainer == TrainerKind::kDdg
                                 ? train_ddg(model, data.train, data.holdout, c.train, c.guidance, options)
                                 : train_baseline(model, data.train, data.holdout, c.train, c.guidance, options);

  auto best = result.best;
  auto final_model = result.final_model;
  save_checkpoint(dir / "checkpoints" / "best.ckpt", best, manifest_for(c, "best", result.history, result.best_epoch));
  save_checkpoint(dir / "checkpoints" / "final.ckpt", final_model,
                  manifest_for(c, "final", result.history, c.train.epochs));
  metrics_table(result.history).save(dir / "metrics");

  const auto& last = result.history.back();
  out << "best epoch " << result.best_epoch;
  for (const auto& m : result.history) {
    if (m.epoch == result.best_epoch && m.robust_accuracy("pgd10")) out << " (pgd10 " << percent(*m.robust_accuracy("pgd10")) << "%)";
  }
  out << ", final epoch " << last.epoch;
  if (last.robust_accuracy("pgd10")) out << " (pgd10 " << percent(*last.robust_accuracy("pgd10")) << "%)";
  out << "\n";
  return kExitOk;
}

int cmd_eval(const EvalRequest& request, std::ostream& out) {
  const CheckpointManifest manifest = read_manifest(request.checkpoint);
  const fs::path run = fs::absolute(request.checkpoint).parent_path().parent_path();
  fs::path config_path;
  if (request.config_path) {
    config_path = *request.config_path;
  } else {
    config_path = run / "config.resolved.json";
    if (!fs::exists(config_path)) {
      throw ConfigError("no config given and " + config_path.string() + " does not exist; pass --config");
    }
  }
  RunConfig c = load_run_config(config_path, request.config_overrides);
  const DataBundle data = load_data(c, false, true);
  c = bind_to_data(c, data.test);

  const auto& a = manifest.architecture;
  if (a.id != c.model.id || a.resolved_width() != c.model.resolved_width() || a.num_classes != c.model.num_classes ||
      !(a.input == c.model.input)) {
    throw ConfigError("checkpoint architecture " + a.id + " (width " + std::to_string(a.resolved_width()) + ", " +
                      std::to_string(a.num_classes) + " classes) does not match the config's " + c.model.id +
                      " (width " + std::to_string(c.model.resolved_width()) + ", " +
                      std::to_string(c.model.num_classes) + " classes) on this data");
  }
  auto model = load_checkpoint(request.checkpoint);
  const auto attacks = parse_attacks(request.attacks.value_or(c.eval.test_attacks), c.eval.epsilon);
  EvalOptions options;
  options.seed = request.seed.value_or(c.seed);
  options.batch_size = c.eval.batch_size;
  options.limit = request.limit.value_or(0);
  const RobustnessReport report = evaluate_robustness(model, data.test, attacks, options);

  Table t;
  t.headers = {"attack", "epsilon", "steps", "step_size", "random_start", "accuracy(%)"};
  t.rows.push_back({"clean", "-", "-", "-", "-", percent(report.clean_accuracy)});
  json rows = json::array();
  for (std::size_t k = 0; k < attacks.size(); ++k) {
    const auto& s = attacks[k];
    const double acc = report.robust[k].second;
    t.rows.push_back({s.name, over_255(s.epsilon), std::to_string(s.num_steps), over_255(s.step_size),
                      s.random_start ? "yes" : "no", percent(acc)});
    rows.push_back({{"name", s.name},
                    {"epsilon", s.epsilon},
                    {"num_steps", s.num_steps},
                    {"step_size", s.step_size},
                    {"random_start", s.random_start},
                    {"accuracy", acc}});
  }
  const json doc{{"checkpoint", request.checkpoint.filename().string()},
                 {"tag", manifest.tag},
                 {"epoch", manifest.epoch},
                 {"seed", options.seed},
                 {"num_samples", report.num_samples},
                 {"clean_accuracy", report.clean_accuracy},
                 {"attacks", rows}};

  const fs::path dir = request.output_dir.value_or(run / "eval");
  const std::string stem = "eval_" + request.checkpoint.stem().string();
  write_json(dir / (stem + ".json"), doc);
  t.save(dir / stem);
  out << request.checkpoint.string() << " (" << manifest.tag << ", epoch " << manifest.epoch << ") on "
      << report.num_samples << " test examples\n"
      << t.to_text();
  return kExitOk;
}

int cmd_ablate(const RunConfig& config, bool dry_run, std::ostream& out) {
  config.validate();
  const auto entries = parse_sweep(config.ablation.sweep);
  if (dry_run) {
    out << "planned " << entries.size() << " run(s), " << config.train.epochs << " epochs each, trainer "
        << to_string(config.train.trainer) << ", " << config.ablation.workers << " worker(s):\n";
    Table t;
    t.headers = {"run", "groups", "group", "budget", "beta1", "beta2"};
    for (const auto& e : entries) {
      t.rows.push_back({e.label, std::to_string(e.group.num_groups),
                        e.baseline ? "-" : std::to_string(e.group.selected_group),
                        e.override_spec.budget ? over_255(*e.override_spec.budget) : "-",
                        short_number(e.override_spec.beta1), short_number(e.override_spec.beta2)});
    }
    out << t.to_text();
    return kExitOk;
  }

  const fs::path dir = config.run_dir();
  fs::create_directories(dir);
  std::vector<SweepRunResult> results;
  if (!entries.empty()) {
    const DataBundle data = load_data(config, true, false);
    const RunConfig c = bind_to_data(config, data.train);
    write_json(dir / "config.resolved.json", c.to_json());
    for (const auto& e : entries) {
      if (!e.baseline && data.train.size() > 0 &&
          static_cast<std::size_t>(e.group.num_groups) > std::min(c.train.batch_size, data.train.size())) {
        throw ConfigError("sweep run " + e.label + " asks for " + std::to_string(e.group.num_groups) +
                          " groups but batches hold at most " +
                          std::to_string(std::min(c.train.batch_size, data.train.size())) + " samples");
      }
    }
    SweepContext ctx;
    ctx.architecture = c.model;
    ctx.plan = c.train;
    ctx.guidance = c.guidance;
    ctx.train = &data.train;
    ctx.holdout = &data.holdout;
    ctx.seed = c.seed;
    ctx.eval_attacks = parse_attacks(c.eval.attacks, c.eval.epsilon);
    ctx.eval_limit = c.eval.limit;
    ctx.eval_batch_size = c.eval.batch_size;
    ctx.workers = c.ablation.workers;
    std::size_t finished = 0;
    out << "running " << entries.size() << " sweep run(s) into " << dir.string() << "\n";
    results = run_sweep(ctx, entries, [&](const SweepRunResult& r) {
      ++finished;
      out << "[" << finished << "/" << entries.size() << "] " << r.entry.label;
      if (r.failed) {
        out << " FAILED: " << r.error << std::endl;
        return;
      }
      write_run_artifacts(dir / "runs" / r.entry.label, r.entry.label, r.history);
      const auto& last = r.history.back();
      out << " clean " << percent(last.clean_accuracy) << "%";
      for (const auto& [name, acc] : last.robust) out << " " << name << " " << percent(acc) << "%";
      out << (r.catastrophic_overfitting ? " [CO]" : "") << std::endl;
    });
  } else {
    write_json(dir / "config.resolved.json", config.to_json());
  }

  JsonlWriter records(dir / "sweep_records.jsonl");
  for (const auto& r : results) records.write(sweep_record(r));
  const Table summary = sweep_summary(results);
  summary.save(dir / "summary");

  std::set<std::string> metrics;
  std::vector<std::string> ordered;
  for (const auto& r : results) {
    for (const auto& n : metric_names(r.history)) {
      if (metrics.insert(n).second) ordered.push_back(n);
    }
  }
  for (const auto& metric : ordered) {
    std::vector<Series> series;
    for (const auto& r : results) {
      if (!r.failed) series.push_back(metric_series(r.entry.label, r.history, metric));
    }
    ChartOptions opts;
    opts.title = metric + " accuracy by run";
    opts.y_min = 0.0;
    opts.y_max = 100.0;
    write_text_file(dir / "plots" / (metric + ".svg"), render_line_chart(series, opts));
  }
  out << summary.to_text();
  const bool any_failed = std::any_of(results.begin(), results.end(), [](const SweepRunResult& r) { return r.failed; });
  return any_failed ? kExitPartialSweep : kExitOk;
}

int cmd_report(const fs::path& run_dir, std::ostream& out) {
  if (fs::exists(run_dir / "metrics.jsonl")) {
    const auto history = read_metrics(run_dir / "metrics.jsonl");
    const Table t = metrics_table(history);
    t.save(run_dir / "report");
    out << t.to_text();
    if (!history.empty()) {
      const MetricsRecord* best = nullptr;
      for (const auto& m : history) {
        const auto acc = m.robust_accuracy("pgd10");
        if (acc && (!best || *acc > *best->robust_accuracy("pgd10"))) best = &m;
      }
      if (best) {
        out << "best pgd10: epoch " << best->epoch << " at " << percent(*best->robust_accuracy("pgd10")) << "%\n";
      }
      const auto final_acc = history.back().robust_accuracy("pgd10");
      out << "final: epoch " << history.back().epoch;
      if (final_acc) out << " at " << percent(*final_acc) << "%";
      out << "\n";
      const auto co = std::count_if(history.begin(), history.end(), [](const MetricsRecord& m) { return m.co_flag; });
      out << "epochs flagged for catastrophic overfitting: " << co << "\n";
    }
    if (fs::is_directory(run_dir / "eval")) {
      std::vector<fs::path> reports;
      for (const auto& e : fs::directory_iterator(run_dir / "eval")) {
        if (e.path().extension() == ".txt") reports.push_back(e.path());
      }
      std::sort(reports.begin(), reports.end());
      for (const auto& p : reports) {
        std::ifstream in(p);
        out << "\n" << p.stem().string() << "\n" << in.rdbuf();
      }
    }
    return kExitOk;
  }
  if (fs::exists(run_dir / "sweep_records.jsonl")) {
    std::vector<SweepRunResult> results;
    for (const auto& j : read_jsonl(run_dir / "sweep_records.jsonl")) {
      SweepRunResult r = sweep_result_from(j);
      const fs::path metrics = run_dir / "runs" / r.entry.label / "metrics.jsonl";
      if (!r.failed && fs::exists(metrics)) r.history = read_metrics(metrics);
      results.push_back(std::move(r));
    }
    const Table t = sweep_summary(results);
    t.save(run_dir / "report");
    out << t.to_text();
    return kExitOk;
  }
  throw IngestionError(run_dir.string() + " holds neither metrics.jsonl nor sweep_records.jsonl");
}

}  // namespace ddg
