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

#include "ddg/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "ddg/ablation.hpp"
#include "ddg/errors.hpp"

namespace ddg {

using nlohmann::json;

double parse_real(const json& value) {
  if (value.is_number()) return value.get<double>();
  if (!value.is_string()) throw std::invalid_argument("expected a number or a fraction such as \"8/255\"");
  const std::string text = value.get<std::string>();
  const auto slash = text.find('/');
  auto number = [&](const std::string& part) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (part.empty() || used != part.size()) throw std::invalid_argument("'" + text + "' is not a number or fraction");
    return v;
  };
  if (slash == std::string::npos) return number(text);
  const double den = number(text.substr(slash + 1));
  if (den == 0.0) throw std::invalid_argument("'" + text + "' divides by zero");
  return number(text.substr(0, slash)) / den;
}

namespace {

long long as_integer(const json& v, long long min) {
  if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
  const long long n = v.get<long long>();
  if (n < min) throw std::invalid_argument("must be at least " + std::to_string(min));
  return n;
}

std::uint64_t as_seed(const json& v) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  return static_cast<std::uint64_t>(as_integer(v, 0));
}

bool as_bool(const json& v) {
  if (!v.is_boolean()) throw std::invalid_argument("expected true or false");
  return v.get<bool>();
}

std::string as_string(const json& v) {
  if (!v.is_string()) throw std::invalid_argument("expected a string");
  return v.get<std::string>();
}

double as_real(const json& v) {
  const double x = parse_real(v);
  if (!std::isfinite(x)) throw std::invalid_argument("must be finite");
  return x;
}

std::vector<std::string> as_string_list(const json& v) {
  std::vector<std::string> out;
  if (v.is_string()) {
    std::istringstream in(v.get<std::string>());
    for (std::string item; std::getline(in, item, ',');) {
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }
  if (!v.is_array()) throw std::invalid_argument("expected a list of strings");
  for (const auto& item : v) out.push_back(as_string(item));
  return out;
}

std::vector<int> as_int_list(const json& v) {
  if (!v.is_array()) throw std::invalid_argument("expected a list of integers");
  std::vector<int> out;
  for (const auto& item : v) out.push_back(static_cast<int>(as_integer(item, 0)));
  return out;
}

// Walks one JSON object, applying known keys and remembering unknown ones.
class Section {
 public:
  Section(const json* obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {}
  Section(const Section&) = delete;

  ~Section() {
    if (!obj_) return;
    for (const auto& [key, value] : obj_->items()) {
      if (!seen_.count(key)) errors_.push_back(path_ + key + ": unknown key");
    }
  }

  template <typename Apply>
  void field(const std::string& key, Apply&& apply) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return;
    try {
      apply(obj_->at(key));
    } catch (const std::exception& e) {
      errors_.push_back(path_ + key + ": " + e.what());
    }
  }

  /// Nested object; a non-object value is reported and skipped.
  const json* child(const std::string& key) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return nullptr;
    const json& v = obj_->at(key);
    if (!v.is_object()) {
      errors_.push_back(path_ + key + ": expected an object");
      return nullptr;
    }
    return &v;
  }

  std::string path(const std::string& key) const { return path_ + key + "."; }

 private:
  const json* obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

}  // namespace

InputShape DataConfig::input_shape() const {
  if (kind == "synthetic") return synthetic.shape;
  return {3, 32, 32};
}

int DataConfig::num_classes() const {
  if (kind == "synthetic") return synthetic.num_classes;
  return 10;
}

json RunConfig::to_json() const {
  const auto& s = data.synthetic;
  return {
      {"name", name},
      {"seed", seed},
      {"output_dir", output_dir},
      {"overrides", overrides},
      {"model", {{"architecture", model.id}, {"width", model.width}}},
      {"data",
       {{"kind", data.kind},
        {"path", data.path},
        {"test_path", data.test_path},
        {"train_limit", data.train_limit},
        {"test_limit", data.test_limit},
        {"holdout_fraction", data.holdout_fraction},
        {"synthetic",
         {{"train_size", s.train_size},
          {"test_size", s.test_size},
          {"num_classes", s.num_classes},
          {"geometry", to_string(s.geometry)},
          {"seed", s.seed},
          {"channels", s.shape.channels},
          {"height", s.shape.height},
          {"width", s.shape.width},
          {"margin", s.margin},
          {"jitter", s.jitter},
          {"sigma", s.sigma}}}}},
      {"train",
       {{"trainer", to_string(train.trainer)},
        {"epochs", train.epochs},
        {"batch_size", train.batch_size},
        {"learning_rate", train.learning_rate},
        {"milestones", train.milestones},
        {"lr_decay", train.lr_decay},
        {"momentum", train.momentum},
        {"weight_decay", train.weight_decay},
        {"augment", train.augment},
        {"disable_pba", train.disable_pba},
        {"disable_ssa", train.disable_ssa},
        {"disable_gs", train.disable_gs},
        {"pos_scale", train.pos_scale},
        {"neg_scale", train.neg_scale},
        {"fgsm_rs_step_scale", train.fgsm_rs_step_scale}}},
      {"guidance",
       {{"xi_base", guidance.xi_base},
        {"kappa", guidance.kappa},
        {"tau1", guidance.tau1},
        {"gamma", guidance.gamma},
        {"lambda_w", guidance.lambda_w},
        {"alpha_w", guidance.alpha_w}}},
      {"eval",
       {{"epsilon", eval.epsilon},
        {"attacks", eval.attacks},
        {"test_attacks", eval.test_attacks},
        {"limit", eval.limit},
        {"batch_size", eval.batch_size}}},
      {"ablation", {{"sweep", ablation.sweep}, {"workers", ablation.workers}}},
  };
}

RunConfig RunConfig::from_json(const json& doc, const RunConfig& base) {
  if (!doc.is_object()) throw ConfigError("config: the document must be a JSON object");
  RunConfig c = base;
  std::vector<std::string> errors;
  bool augment_set = false;
  {
    Section top(&doc, "", errors);
    top.field("name", [&](const json& v) { c.name = as_string(v); });
    top.field("seed", [&](const json& v) { c.seed = as_seed(v); });
    top.field("output_dir", [&](const json& v) { c.output_dir = as_string(v); });
    top.field("overrides", [&](const json& v) { c.overrides = as_string_list(v); });

    {
      Section m(top.child("model"), "model.", errors);
      m.field("architecture", [&](const json& v) { c.model.id = as_string(v); });
      m.field("width", [&](const json& v) { c.model.width = static_cast<int>(as_integer(v, 0)); });
    }
    {
      Section d(top.child("data"), "data.", errors);
      d.field("kind", [&](const json& v) { c.data.kind = as_string(v); });
      d.field("path", [&](const json& v) { c.data.path = as_string(v); });
      d.field("test_path", [&](const json& v) { c.data.test_path = as_string(v); });
      d.field("train_limit", [&](const json& v) { c.data.train_limit = static_cast<std::size_t>(as_integer(v, 0)); });
      d.field("test_limit", [&](const json& v) { c.data.test_limit = static_cast<std::size_t>(as_integer(v, 0)); });
      d.field("holdout_fraction", [&](const json& v) { c.data.holdout_fraction = as_real(v); });
      Section s(d.child("synthetic"), d.path("synthetic"), errors);
      auto& syn = c.data.synthetic;
      s.field("train_size", [&](const json& v) { syn.train_size = static_cast<std::size_t>(as_integer(v, 1)); });
      s.field("test_size", [&](const json& v) { syn.test_size = static_cast<std::size_t>(as_integer(v, 0)); });
      s.field("num_classes", [&](const json& v) { syn.num_classes = static_cast<int>(as_integer(v, 2)); });
      s.field("geometry", [&](const json& v) { syn.geometry = parse_geometry(as_string(v)); });
      s.field("seed", [&](const json& v) { syn.seed = as_seed(v); });
      s.field("channels", [&](const json& v) { syn.shape.channels = static_cast<std::size_t>(as_integer(v, 1)); });
      s.field("height", [&](const json& v) { syn.shape.height = static_cast<std::size_t>(as_integer(v, 1)); });
      s.field("width", [&](const json& v) { syn.shape.width = static_cast<std::size_t>(as_integer(v, 1)); });
      s.field("margin", [&](const json& v) { syn.margin = as_real(v); });
      s.field("jitter", [&](const json& v) { syn.jitter = as_real(v); });
      s.field("sigma", [&](const json& v) { syn.sigma = as_real(v); });
    }
    {
      Section t(top.child("train"), "train.", errors);
      auto& p = c.train;
      t.field("trainer", [&](const json& v) { p.trainer = parse_trainer(as_string(v)); });
      t.field("epochs", [&](const json& v) { p.epochs = static_cast<int>(as_integer(v, 1)); });
      t.field("batch_size", [&](const json& v) { p.batch_size = static_cast<std::size_t>(as_integer(v, 1)); });
      t.field("learning_rate", [&](const json& v) { p.learning_rate = as_real(v); });
      t.field("milestones", [&](const json& v) { p.milestones = as_int_list(v); });
      t.field("lr_decay", [&](const json& v) { p.lr_decay = as_real(v); });
      t.field("momentum", [&](const json& v) { p.momentum = as_real(v); });
      t.field("weight_decay", [&](const json& v) { p.weight_decay = as_real(v); });
      t.field("augment", [&](const json& v) {
        p.augment = as_bool(v);
        augment_set = true;
      });
      t.field("disable_pba", [&](const json& v) { p.disable_pba = as_bool(v); });
      t.field("disable_ssa", [&](const json& v) { p.disable_ssa = as_bool(v); });
      t.field("disable_gs", [&](const json& v) { p.disable_gs = as_bool(v); });
      t.field("pos_scale", [&](const json& v) { p.pos_scale = as_real(v); });
      t.field("neg_scale", [&](const json& v) { p.neg_scale = as_real(v); });
      t.field("fgsm_rs_step_scale", [&](const json& v) { p.fgsm_rs_step_scale = as_real(v); });
    }
    {
      Section g(top.child("guidance"), "guidance.", errors);
      auto& q = c.guidance;
      g.field("xi_base", [&](const json& v) { q.xi_base = as_real(v); });
      g.field("kappa", [&](const json& v) { q.kappa = as_real(v); });
      g.field("tau1", [&](const json& v) { q.tau1 = static_cast<int>(as_integer(v, 1)); });
      g.field("gamma", [&](const json& v) { q.gamma = as_real(v); });
      g.field("lambda_w", [&](const json& v) { q.lambda_w = as_real(v); });
      g.field("alpha_w", [&](const json& v) { q.alpha_w = as_real(v); });
    }
    {
      Section e(top.child("eval"), "eval.", errors);
      e.field("epsilon", [&](const json& v) { c.eval.epsilon = as_real(v); });
      e.field("attacks", [&](const json& v) { c.eval.attacks = as_string_list(v); });
      e.field("test_attacks", [&](const json& v) { c.eval.test_attacks = as_string_list(v); });
      e.field("limit", [&](const json& v) { c.eval.limit = static_cast<std::size_t>(as_integer(v, 0)); });
      e.field("batch_size", [&](const json& v) { c.eval.batch_size = static_cast<std::size_t>(as_integer(v, 1)); });
    }
    {
      Section a(top.child("ablation"), "ablation.", errors);
      a.field("sweep", [&](const json& v) { c.ablation.sweep = as_string(v); });
      a.field("workers", [&](const json& v) { c.ablation.workers = static_cast<int>(as_integer(v, 1)); });
    }
  }
  if (!errors.empty()) throw ConfigError("invalid config:\n  " + join(errors, "\n  "));
  // Crops and flips suit natural images; synthetic pixels carry position-specific signal.
  if (!augment_set) c.train.augment = c.data.kind == "cifar10";
  c.model.input = c.data.input_shape();
  c.model.num_classes = c.data.num_classes();
  c.guidance.num_classes = c.data.num_classes();
  return c;
}

RunConfig RunConfig::from_json(const json& doc) { return from_json(doc, RunConfig{}); }

void RunConfig::validate() const {
  std::vector<std::string> errors;
  auto check = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      errors.emplace_back(e.what());
    }
  };
  check([&] {
    if (name.empty() || name.find('/') != std::string::npos) throw ConfigError("name must be a non-empty file name");
  });
  check([&] {
    if (data.kind != "cifar10" && data.kind != "synthetic" && data.kind != "file") {
      throw ConfigError("data.kind must be cifar10, synthetic or file, got '" + data.kind + "'");
    }
    if (data.kind == "file" && data.path.empty()) throw ConfigError("data.path is required for data.kind file");
  });
  check([&] {
    if (!(data.holdout_fraction >= 0.0 && data.holdout_fraction < 1.0)) {
      throw ConfigError("data.holdout_fraction must lie in [0, 1)");
    }
  });
  check([&] {
    if (data.kind == "synthetic" && data.synthetic.train_size < static_cast<std::size_t>(data.synthetic.num_classes)) {
      throw ConfigError("data.synthetic.train_size must be at least data.synthetic.num_classes");
    }
  });
  check([&] { make_classifier<float>(model, 0); });
  check([&] { train.validate(); });
  check([&] { guidance.validate(); });
  check([&] { check_plan_guidance(train, guidance); });
  check([&] { parse_attacks(eval.attacks, eval.epsilon); });
  check([&] { parse_attacks(eval.test_attacks, eval.epsilon); });
  check([&] {
    if (ablation.workers < 1) throw ConfigError("ablation.workers must be at least 1");
  });
  check([&] { parse_sweep(ablation.sweep); });
  if (!errors.empty()) throw ConfigError("invalid config:\n  " + join(errors, "\n  "));
}

std::filesystem::path RunConfig::run_dir() const {
  if (!output_dir.empty()) return output_dir;
  const char* root = std::getenv("DDG_OUTPUT_ROOT");
  return std::filesystem::path(root && *root ? root : "runs") / name;
}

RunConfig ablation_defaults() {
  RunConfig c;
  c.name = "ablation";
  c.train.trainer = TrainerKind::kUniformGuidance;
  c.train.epochs = 20;
  c.train.milestones = {};
  c.eval.attacks = {"pgd10", "cw"};
  return c;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) throw ConfigError("override '" + assignment + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                          const RunConfig& base) {
  json doc = json::object();
  if (path != "-") {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  RunConfig c = RunConfig::from_json(doc, base);
  for (const auto& o : overrides) c.overrides.push_back(o);
  c.validate();
  return c;
}

}  // namespace ddg
