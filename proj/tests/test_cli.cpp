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
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "ddg/commands.hpp"
#include "ddg/config.hpp"
#include "ddg/errors.hpp"
#include "ddg/metrics_io.hpp"
#include "ddg/plot.hpp"
#include "test_util.hpp"

namespace ddg {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

Outcome run_cli(const std::vector<std::string>& args, const fs::path& scratch) {
  std::string cmd = quote(DDG_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  cmd += " >" + quote(out.string()) + " 2>" + quote(err.string());
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = testing::read_file(out);
  o.err = testing::read_file(err);
  return o;
}

fs::path write_config(const fs::path& dir, const json& doc) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << doc.dump(2);
  return p;
}

// Small enough for a few seconds per run.
json small_config() {
  return json::parse(R"({
    "data": {"kind": "synthetic", "holdout_fraction": 0.25,
             "synthetic": {"train_size": 96, "test_size": 64, "num_classes": 4, "height": 8, "width": 8}},
    "model": {"architecture": "tiny-cnn", "width": 4},
    "train": {"epochs": 3, "batch_size": 24, "milestones": [2]},
    "eval": {"attacks": ["fgsm"]}
  })");
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

// ---- config ----

TEST(RunConfig, DefaultsMirrorTheStandardSetup) {
  const RunConfig c;
  EXPECT_EQ(c.train.epochs, 110);
  EXPECT_EQ(c.train.batch_size, 128u);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.1);
  EXPECT_EQ(c.train.milestones, (std::vector<int>{100, 105}));
  EXPECT_DOUBLE_EQ(c.guidance.xi_base, 8.0 / 255.0);
  EXPECT_DOUBLE_EQ(c.eval.epsilon, 8.0 / 255.0);
  EXPECT_NO_THROW(c.validate());
  const RunConfig a = ablation_defaults();
  EXPECT_EQ(a.train.epochs, 20);
  EXPECT_TRUE(a.train.milestones.empty());
  EXPECT_EQ(a.train.trainer, TrainerKind::kUniformGuidance);
}

TEST(RunConfig, ResolvedSnapshotRoundTrips) {
  json doc = small_config();
  doc["guidance"] = {{"xi_base", "10/255"}, {"tau1", 4}};
  const RunConfig c = RunConfig::from_json(doc);
  EXPECT_DOUBLE_EQ(c.guidance.xi_base, 10.0 / 255.0);
  EXPECT_EQ(c.model.input, (InputShape{3, 8, 8}));
  EXPECT_EQ(c.guidance.num_classes, 4);
  EXPECT_FALSE(c.train.augment);
  const json snapshot = c.to_json();
  EXPECT_EQ(RunConfig::from_json(snapshot).to_json(), snapshot);
  for (const char* key : {"name", "seed", "model", "data", "train", "guidance", "eval", "ablation"}) {
    EXPECT_TRUE(snapshot.contains(key)) << key;
  }
  EXPECT_TRUE(RunConfig::from_json(json::object()).train.augment);
}

TEST(RunConfig, ReportsEveryBadFieldByPath) {
  const json doc = json::parse(R"({"train": {"epochs": "ten", "colour": 1}, "guidance": {"gamma": "x/2"},
                                   "extra": true, "model": 3})");
  try {
    RunConfig::from_json(doc);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const char* path : {"train.epochs", "train.colour: unknown key", "guidance.gamma", "extra: unknown key",
                             "model: expected an object"}) {
      EXPECT_NE(msg.find(path), std::string::npos) << path << " missing from:\n" << msg;
    }
  }
}

TEST(RunConfig, CrossFieldRules) {
  RunConfig c;
  c.guidance.tau1 = 128;
  EXPECT_THROW(c.validate(), ConfigError);
  c.train.disable_pba = true;
  EXPECT_NO_THROW(c.validate());
  c = RunConfig{};
  c.train.milestones = {105, 100};
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.eval.attacks = {"pgd"};
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.ablation.sweep = "groups=4;select=9";
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RunConfig, FractionsAndOverrides) {
  EXPECT_DOUBLE_EQ(parse_real(json("8/255")), 8.0 / 255.0);
  EXPECT_DOUBLE_EQ(parse_real(json(0.5)), 0.5);
  EXPECT_THROW(parse_real(json("8/")), std::invalid_argument);
  EXPECT_THROW(parse_real(json("1/0")), std::invalid_argument);
  json doc = json::object();
  apply_override(doc, "train.epochs=5");
  apply_override(doc, "data.synthetic.geometry=linear_margin");
  apply_override(doc, "train.milestones=[2,4]");
  EXPECT_EQ(doc["train"]["epochs"], 5);
  EXPECT_EQ(doc["data"]["synthetic"]["geometry"], "linear_margin");
  EXPECT_EQ(doc["train"]["milestones"], json::array({2, 4}));
  EXPECT_THROW(apply_override(doc, "novalue"), ConfigError);
  EXPECT_THROW(apply_override(doc, "train.epochs.x=1"), ConfigError);
}

// ---- tables and plots ----

TEST(Tables, PercentCsvAndText) {
  EXPECT_EQ(percent(0.12345), "12.35");
  EXPECT_EQ(percent(1.0), "100.00");
  EXPECT_EQ(percent(std::nan("")), "-");
  Table t;
  t.headers = {"run", "acc"};
  t.rows = {{"a,b", "1.50"}, {"long name", "10.00"}};
  EXPECT_EQ(t.to_csv(), "run,acc\n\"a,b\",1.50\nlong name,10.00\n");
  EXPECT_EQ(t.to_text(), "run        acc\n----------------\na,b         1.50\nlong name  10.00\n");
}

TEST(Tables, MetricsTableKeepsRecordedNumbers) {
  MetricsRecord m;
  m.epoch = 2;
  m.learning_rate = 0.1;
  m.train_accuracy = 0.5;
  m.clean_accuracy = 0.8125;
  m.robust = {{"pgd10", 0.4}};
  const Table t = metrics_table({m});
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.headers.back(), "co");
  EXPECT_EQ(t.rows[0][6], "81.25");
  EXPECT_EQ(t.rows[0][7], "40.00");
}

TEST(Plot, SvgHasOneLinePerSeriesAndGaps) {
  Series a{"clean", {1, 2, 3}, {10, 20, 30}};
  Series b{"pgd10", {1, 2, 3}, {5, std::nan(""), 15}};
  const std::string svg = render_line_chart({a, b}, {});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_NE(svg.find(">clean<"), std::string::npos);
  EXPECT_NE(svg.find(">pgd10<"), std::string::npos);
  std::size_t paths = 0, moves = 0;
  for (std::size_t p = svg.find("<path"); p != std::string::npos; p = svg.find("<path", p + 1)) ++paths;
  for (std::size_t p = svg.find(" M"); p != std::string::npos; p = svg.find(" M", p + 1)) ++moves;
  EXPECT_EQ(paths, 2u);
  EXPECT_EQ(moves, 1u);  // the gap restarts pgd10's line; the first move of each path has no leading space
  EXPECT_NO_THROW(render_line_chart({}, {}));
}

// ---- CLI ----

TEST(Cli, MinimalSyntheticConfigCompletes) {
  const auto dir = testing::scratch_dir("cli_minimal");
  const auto cfg = write_config(dir, json{{"data", {{"kind", "synthetic"}}}});
  const auto r = run_cli({"train", cfg.string(), "--output", (dir / "run").string()}, dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto metrics = read_metrics(dir / "run" / "metrics.jsonl");
  EXPECT_GE(metrics.size(), 1u);
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoints" / "best.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoints" / "final.ckpt"));
  const json snapshot = json::parse(testing::read_file(dir / "run" / "config.resolved.json"));
  EXPECT_EQ(snapshot["train"]["epochs"], 110);
  EXPECT_EQ(snapshot["output_dir"], (dir / "run").string());
}

TEST(Cli, RepeatedTrainingGivesIdenticalMetricsStreams) {
  const auto dir = testing::scratch_dir("cli_repeat");
  const auto cfg = write_config(dir, small_config());
  for (const char* name : {"a", "b"}) {
    const auto r = run_cli({"train", cfg.string(), "--seed", "5", "--output", (dir / name).string()}, dir);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const std::string a = testing::read_file(dir / "a" / "metrics.jsonl");
  EXPECT_EQ(count_lines(a), 3u);
  EXPECT_EQ(a, testing::read_file(dir / "b" / "metrics.jsonl"));
  EXPECT_EQ(testing::read_file(dir / "a" / "metrics.csv"), testing::read_file(dir / "b" / "metrics.csv"));

  // Rerunning from the snapshot alone reproduces the stream.
  const auto again = run_cli({"train", (dir / "a" / "config.resolved.json").string(), "--output", (dir / "c").string()}, dir);
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(a, testing::read_file(dir / "c" / "metrics.jsonl"));
  const json snap = json::parse(testing::read_file(dir / "a" / "config.resolved.json"));
  EXPECT_EQ(snap["seed"], 5);
  EXPECT_EQ(snap["overrides"].size(), 2u);
}

TEST(Cli, TransitionRankAtBatchSizeIsRejectedBeforeTraining) {
  const auto dir = testing::scratch_dir("cli_tau1");
  auto doc = small_config();
  doc["guidance"] = {{"tau1", 24}};
  const auto cfg = write_config(dir, doc);
  const auto r = run_cli({"train", cfg.string(), "--output", (dir / "run").string()}, dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("guidance.tau1"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST(Cli, ConfigErrorsExitWithCodeTwo) {
  const auto dir = testing::scratch_dir("cli_bad");
  auto doc = small_config();
  doc["train"]["learning_rat"] = 0.1;
  const auto cfg = write_config(dir, doc);
  auto r = run_cli({"train", cfg.string()}, dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("train.learning_rat: unknown key"), std::string::npos) << r.err;
  r = run_cli({"train", (dir / "missing.json").string()}, dir);
  EXPECT_EQ(r.code, 2);
  r = run_cli({"frobnicate"}, dir);
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, DivergenceExitsWithNanCode) {
  const auto dir = testing::scratch_dir("cli_nan");
  const auto cfg = write_config(dir, small_config());
  const auto r = run_cli({"train", cfg.string(), "--set", "train.learning_rate=1e30", "--output", (dir / "run").string()}, dir);
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("non-finite loss"), std::string::npos) << r.err;
  EXPECT_TRUE(fs::exists(dir / "run" / "metrics.jsonl"));
  EXPECT_FALSE(fs::exists(dir / "run" / "checkpoints" / "final.ckpt"));
}

TEST(Cli, EvalReportsAttacksInStrengthOrder) {
  const auto dir = testing::scratch_dir("cli_eval");
  auto doc = small_config();
  doc["train"]["epochs"] = 4;
  const auto cfg = write_config(dir, doc);
  ASSERT_EQ(run_cli({"train", cfg.string(), "--output", (dir / "run").string()}, dir).code, 0);
  const auto ckpt = (dir / "run" / "checkpoints" / "final.ckpt").string();

  auto r = run_cli({"eval", ckpt, "--attacks", "pgd10,pgd20,pgd50", "--seed", "3"}, dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string first = testing::read_file(dir / "run" / "eval" / "eval_final.json");
  const json report = json::parse(first);
  ASSERT_EQ(report["attacks"].size(), 3u);
  const double pgd10 = report["attacks"][0]["accuracy"], pgd50 = report["attacks"][2]["accuracy"];
  EXPECT_LE(pgd50, pgd10 + 0.02);
  EXPECT_EQ(report["attacks"][1]["num_steps"], 20);
  EXPECT_DOUBLE_EQ(report["attacks"][0]["step_size"].get<double>(), 2.0 / 255.0);
  EXPECT_EQ(report["num_samples"], 64);
  EXPECT_NE(r.out.find("8/255"), std::string::npos);

  r = run_cli({"eval", ckpt, "--attacks", "pgd10,pgd20,pgd50", "--seed", "3"}, dir);
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(first, testing::read_file(dir / "run" / "eval" / "eval_final.json"));

  r = run_cli({"eval", ckpt, "--attacks", "", "--output", (dir / "clean").string()}, dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const json clean = json::parse(testing::read_file(dir / "clean" / "eval_final.json"));
  EXPECT_TRUE(clean["attacks"].empty());
  EXPECT_EQ(count_lines(testing::read_file(dir / "clean" / "eval_final.csv")), 2u);

  r = run_cli({"eval", ckpt, "--set", "model.width=8"}, dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("does not match"), std::string::npos) << r.err;

  r = run_cli({"report", (dir / "run").string()}, dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("best pgd10: epoch"), std::string::npos);
  EXPECT_NE(r.out.find("eval_final"), std::string::npos);
}

TEST(Cli, AblateDryRunListsPlannedRuns) {
  const auto dir = testing::scratch_dir("cli_dry");
  const auto cfg = write_config(dir, small_config());
  const auto r = run_cli({"ablate", cfg.string(), "--sweep", "groups=4;select=all;budget=16/255", "--dry-run",
                          "--output", (dir / "sweep").string()},
                         dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("planned 4 run(s)"), std::string::npos) << r.out;
  for (int g = 0; g < 4; ++g) EXPECT_NE(r.out.find("G4-g" + std::to_string(g) + "-budget16"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "sweep"));
  EXPECT_EQ(run_cli({"ablate", cfg.string(), "--sweep", "groups=4;select=7", "--dry-run"}, dir).code, 2);
}

TEST(Cli, AblateSingleEntryWritesOneTrajectoryAndPlotSet) {
  const auto dir = testing::scratch_dir("cli_ablate_one");
  const auto cfg = write_config(dir, small_config());
  const auto r = run_cli({"ablate", cfg.string(), "--sweep", "groups=4;select=3;budget=4/255", "--set",
                          "train.epochs=2", "--set", "train.milestones=[]", "--output", (dir / "sweep").string()},
                         dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path run = dir / "sweep" / "runs" / "G4-g3-budget4";
  EXPECT_TRUE(fs::exists(run / "trajectory.csv"));
  EXPECT_TRUE(fs::exists(run / "curves.svg"));
  EXPECT_EQ(count_lines(testing::read_file(run / "metrics.jsonl")), 2u);
  EXPECT_TRUE(fs::exists(dir / "sweep" / "plots" / "clean.svg"));
  EXPECT_TRUE(fs::exists(dir / "sweep" / "plots" / "pgd10.svg"));
  EXPECT_EQ(count_lines(testing::read_file(dir / "sweep" / "sweep_records.jsonl")), 1u);
  const json snap = json::parse(testing::read_file(dir / "sweep" / "config.resolved.json"));
  EXPECT_EQ(snap["train"]["trainer"], "uniform_guidance");
  EXPECT_EQ(snap["train"]["milestones"], json::array());
}

TEST(Cli, FourGroupSweepIsReproducible) {
  const auto dir = testing::scratch_dir("cli_ablate_four");
  const auto cfg = write_config(dir, small_config());
  for (const char* name : {"a", "b"}) {
    const auto r = run_cli({"ablate", cfg.string(), "--sweep", "groups=4;select=all;budget=16/255", "--set",
                            "train.epochs=2", "--set", "train.milestones=[]", "--set", "ablation.workers=2", "--output", (dir / name).string()},
                           dir);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const std::string summary = testing::read_file(dir / "a" / "summary.csv");
  EXPECT_EQ(count_lines(summary), 5u);
  EXPECT_EQ(summary, testing::read_file(dir / "b" / "summary.csv"));
  EXPECT_EQ(testing::read_file(dir / "a" / "sweep_records.jsonl"), testing::read_file(dir / "b" / "sweep_records.jsonl"));
  for (int g = 0; g < 4; ++g) {
    const fs::path rel = fs::path("runs") / ("G4-g" + std::to_string(g) + "-budget16") / "metrics.jsonl";
    EXPECT_EQ(testing::read_file(dir / "a" / rel), testing::read_file(dir / "b" / rel)) << rel;
  }
  const auto report = run_cli({"report", (dir / "a").string()}, dir);
  ASSERT_EQ(report.code, 0) << report.err;
  EXPECT_EQ(testing::read_file(dir / "a" / "report.csv"), summary);
}

TEST(Cli, PartialSweepFailureExitsWithCodeFour) {
  const auto dir = testing::scratch_dir("cli_ablate_fail");
  auto doc = small_config();
  // Every run diverges; the sweep still completes and reports them.
  doc["train"]["learning_rate"] = 1e30;
  const auto cfg = write_config(dir, doc);
  const auto r = run_cli({"ablate", cfg.string(), "--sweep", "groups=4;select=0;baseline", "--set", "train.epochs=2",
                          "--set", "train.milestones=[]", "--output", (dir / "sweep").string()},
                         dir);
  EXPECT_EQ(r.code, 4) << r.out << r.err;
  EXPECT_NE(r.out.find("FAILED"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "sweep" / "summary.csv"));
}

}  // namespace
}  // namespace ddg
