#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fairsan/attacks.hpp"
#include "fairsan/classifier.hpp"
#include "fairsan/dataset.hpp"
#include "fairsan/defenses.hpp"
#include "fairsan/error.hpp"
#include "fairsan/evaluation.hpp"
#include "fairsan/hashing.hpp"
#include "fairsan/ingestion.hpp"
#include "fairsan/rng.hpp"
#include "fairsan/version.hpp"

namespace fairsan {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Stage errors and exit codes
// ---------------------------------------------------------------------------

/// Pipeline failure annotated with the stage that raised it; the exit code is
/// what the CLI process should return.
struct StageError : std::runtime_error {
  std::string stage;
  int exit_code;
  StageError(std::string stage_name, int code, const std::string& message)
      : std::runtime_error(message), stage(std::move(stage_name)), exit_code(code) {}
};

inline constexpr int kExitConfig = 2;
inline constexpr int kExitIngest = 3;
inline constexpr int kExitAttack = 4;
inline constexpr int kExitDefense = 5;
inline constexpr int kExitTrain = 6;
inline constexpr int kExitEvaluate = 7;
inline constexpr int kExitIo = 8;

/// Environment variable that overrides the configured output directory.
inline constexpr const char* kOutDirEnvVar = "FAIRSAN_OUT";

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct DatasetConfig {
  std::string kind = "synthetic";  // adult | compas | synthetic | generic_csv
  std::string path;
  bool balance = false;
  double split_train = 0.6;
  double split_validation = 0.2;
  double split_test = 0.2;
  bool stratified = true;
  // synthetic pipeline
  std::size_t synth_n = 2000;
  std::size_t synth_dim = 5;
  double synth_separation = 2.0;
  double synth_group_bias = 0.4;
  // generic_csv pipeline
  std::string label_column = "y";
  std::string group_column = "z";
  /// Reference-table id for delta emission ("" = pick by kind).
  std::string reference;
};

struct AttackSpecConfig {
  std::string kind = "none";  // none | label_flip | attr_flip | min_max |
                              // f_attack | f_attack_star | replay
  double epsilon = 0.1;
  double d = 9.0;
  std::optional<int> fixed_z;
  double lambda = 3.0;
  double eta = 0.05;
  std::optional<std::size_t> n_burn;
  std::optional<double> tau;  // unset: use the fairness tolerance
  bool insert = true;         // flip attacks: append copies vs flip in place
  std::string replay_path;    // poison CSV for kind == replay
};

struct DefenseSpecConfig {
  std::string kind = "none";  // none | knn | sever | rfc
  std::size_t knn_k = 5;
  double knn_fraction = 0.15;
  std::size_t sever_rounds = 4;
  double sever_fraction = 0.075;
  double sever_penalty = 3.0;  // fairness-penalty weight of SEVER's trainer
  std::size_t rfc_iterations = 8;
  double rfc_min_improvement = 1e-4;
  double rfc_percentile = 90.0;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  AttackSpecConfig attack;
  DefenseSpecConfig defense;
  FairnessCriterion criterion = FairnessCriterion::equalized_tpr;
  double tau = 0.05;
  double valscore_lambda = 3.0;
  FairnessConvention convention = FairnessConvention::pairwise_tpr;
  double learning_rate = 0.5;
  int epochs = 300;
  double norm_cap = 10.0;
  double surrogate_temperature = 0.1;
  std::vector<double> grid_penalties = {0.0, 0.3, 1.0, 3.0, 10.0};
  std::vector<double> grid_l2 = {1e-4, 1e-3, 1e-2};
  std::uint64_t seed = 0;
  std::string out_dir = "runs";
  int jobs = 1;
};

namespace detail {

inline void require_keys(const json& obj, const std::string& where,
                         std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* key : allowed)
      if (it.key() == key) {
        known = true;
        break;
      }
    if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
inline std::optional<T> opt_from(const json& obj, const char* key) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return obj.at(key).get<T>();
}

}  // namespace detail

inline json to_json(const ExperimentConfig& cfg) {
  json j;
  j["dataset"] = {{"kind", cfg.dataset.kind},
                  {"path", cfg.dataset.path},
                  {"balance", cfg.dataset.balance},
                  {"split_train", cfg.dataset.split_train},
                  {"split_validation", cfg.dataset.split_validation},
                  {"split_test", cfg.dataset.split_test},
                  {"stratified", cfg.dataset.stratified},
                  {"synth_n", cfg.dataset.synth_n},
                  {"synth_dim", cfg.dataset.synth_dim},
                  {"synth_separation", cfg.dataset.synth_separation},
                  {"synth_group_bias", cfg.dataset.synth_group_bias},
                  {"label_column", cfg.dataset.label_column},
                  {"group_column", cfg.dataset.group_column},
                  {"reference", cfg.dataset.reference}};
  j["attack"] = {{"kind", cfg.attack.kind},
                 {"epsilon", cfg.attack.epsilon},
                 {"d", cfg.attack.d},
                 {"fixed_z", cfg.attack.fixed_z ? json(*cfg.attack.fixed_z) : json()},
                 {"lambda", cfg.attack.lambda},
                 {"eta", cfg.attack.eta},
                 {"n_burn", cfg.attack.n_burn ? json(*cfg.attack.n_burn) : json()},
                 {"tau", cfg.attack.tau ? json(*cfg.attack.tau) : json()},
                 {"insert", cfg.attack.insert},
                 {"replay_path", cfg.attack.replay_path}};
  j["defense"] = {{"kind", cfg.defense.kind},
                  {"knn_k", cfg.defense.knn_k},
                  {"knn_fraction", cfg.defense.knn_fraction},
                  {"sever_rounds", cfg.defense.sever_rounds},
                  {"sever_fraction", cfg.defense.sever_fraction},
                  {"sever_penalty", cfg.defense.sever_penalty},
                  {"rfc_iterations", cfg.defense.rfc_iterations},
                  {"rfc_min_improvement", cfg.defense.rfc_min_improvement},
                  {"rfc_percentile", cfg.defense.rfc_percentile}};
  j["fairness"] = {{"criterion", to_string(cfg.criterion)}, {"tau", cfg.tau}};
  j["valscore"] = {{"lambda", cfg.valscore_lambda}};
  j["convention"] = to_string(cfg.convention);
  j["train"] = {{"learning_rate", cfg.learning_rate},
                {"epochs", cfg.epochs},
                {"norm_cap", cfg.norm_cap},
                {"surrogate_temperature", cfg.surrogate_temperature}};
  j["grid"] = {{"penalties", cfg.grid_penalties}, {"l2", cfg.grid_l2}};
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["jobs"] = cfg.jobs;
  return j;
}

namespace detail {

inline ExperimentConfig config_from_json_unchecked(const json& j) {
  detail::require_keys(j, "config",
                       {"dataset", "attack", "defense", "fairness", "valscore",
                        "convention", "train", "grid", "seed", "out_dir", "jobs"});
  ExperimentConfig cfg;
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    detail::require_keys(d, "dataset",
                         {"kind", "path", "balance", "split_train", "split_validation",
                          "split_test", "stratified", "synth_n", "synth_dim",
                          "synth_separation", "synth_group_bias", "label_column",
                          "group_column", "reference"});
    cfg.dataset.kind = d.value("kind", cfg.dataset.kind);
    cfg.dataset.path = d.value("path", cfg.dataset.path);
    cfg.dataset.balance = d.value("balance", cfg.dataset.balance);
    cfg.dataset.split_train = d.value("split_train", cfg.dataset.split_train);
    cfg.dataset.split_validation = d.value("split_validation", cfg.dataset.split_validation);
    cfg.dataset.split_test = d.value("split_test", cfg.dataset.split_test);
    cfg.dataset.stratified = d.value("stratified", cfg.dataset.stratified);
    cfg.dataset.synth_n = d.value("synth_n", cfg.dataset.synth_n);
    cfg.dataset.synth_dim = d.value("synth_dim", cfg.dataset.synth_dim);
    cfg.dataset.synth_separation = d.value("synth_separation", cfg.dataset.synth_separation);
    cfg.dataset.synth_group_bias = d.value("synth_group_bias", cfg.dataset.synth_group_bias);
    cfg.dataset.label_column = d.value("label_column", cfg.dataset.label_column);
    cfg.dataset.group_column = d.value("group_column", cfg.dataset.group_column);
    cfg.dataset.reference = d.value("reference", cfg.dataset.reference);
  }
  if (j.contains("attack")) {
    const json& a = j.at("attack");
    detail::require_keys(a, "attack",
                         {"kind", "epsilon", "d", "fixed_z", "lambda", "eta", "n_burn",
                          "tau", "insert", "replay_path"});
    cfg.attack.kind = a.value("kind", cfg.attack.kind);
    cfg.attack.epsilon = a.value("epsilon", cfg.attack.epsilon);
    cfg.attack.d = a.value("d", cfg.attack.d);
    cfg.attack.fixed_z = detail::opt_from<int>(a, "fixed_z");
    cfg.attack.lambda = a.value("lambda", cfg.attack.lambda);
    cfg.attack.eta = a.value("eta", cfg.attack.eta);
    cfg.attack.n_burn = detail::opt_from<std::size_t>(a, "n_burn");
    cfg.attack.tau = detail::opt_from<double>(a, "tau");
    cfg.attack.insert = a.value("insert", cfg.attack.insert);
    cfg.attack.replay_path = a.value("replay_path", cfg.attack.replay_path);
  }
  if (j.contains("defense")) {
    const json& d = j.at("defense");
    detail::require_keys(d, "defense",
                         {"kind", "knn_k", "knn_fraction", "sever_rounds",
                          "sever_fraction", "sever_penalty", "rfc_iterations",
                          "rfc_min_improvement", "rfc_percentile"});
    cfg.defense.kind = d.value("kind", cfg.defense.kind);
    cfg.defense.knn_k = d.value("knn_k", cfg.defense.knn_k);
    cfg.defense.knn_fraction = d.value("knn_fraction", cfg.defense.knn_fraction);
    cfg.defense.sever_rounds = d.value("sever_rounds", cfg.defense.sever_rounds);
    cfg.defense.sever_fraction = d.value("sever_fraction", cfg.defense.sever_fraction);
    cfg.defense.sever_penalty = d.value("sever_penalty", cfg.defense.sever_penalty);
    cfg.defense.rfc_iterations = d.value("rfc_iterations", cfg.defense.rfc_iterations);
    cfg.defense.rfc_min_improvement =
        d.value("rfc_min_improvement", cfg.defense.rfc_min_improvement);
    cfg.defense.rfc_percentile = d.value("rfc_percentile", cfg.defense.rfc_percentile);
  }
  if (j.contains("fairness")) {
    const json& f = j.at("fairness");
    detail::require_keys(f, "fairness", {"criterion", "tau"});
    cfg.criterion = fairness_criterion_from_string(
        f.value("criterion", to_string(cfg.criterion)));
    cfg.tau = f.value("tau", cfg.tau);
  }
  if (j.contains("valscore")) {
    const json& v = j.at("valscore");
    detail::require_keys(v, "valscore", {"lambda"});
    cfg.valscore_lambda = v.value("lambda", cfg.valscore_lambda);
  }
  if (j.contains("convention"))
    cfg.convention = fairness_convention_from_string(j.at("convention").get<std::string>());
  if (j.contains("train")) {
    const json& t = j.at("train");
    detail::require_keys(t, "train",
                         {"learning_rate", "epochs", "norm_cap", "surrogate_temperature"});
    cfg.learning_rate = t.value("learning_rate", cfg.learning_rate);
    cfg.epochs = t.value("epochs", cfg.epochs);
    cfg.norm_cap = t.value("norm_cap", cfg.norm_cap);
    cfg.surrogate_temperature =
        t.value("surrogate_temperature", cfg.surrogate_temperature);
  }
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    detail::require_keys(g, "grid", {"penalties", "l2"});
    if (g.contains("penalties")) cfg.grid_penalties = g.at("penalties").get<std::vector<double>>();
    if (g.contains("l2")) cfg.grid_l2 = g.at("l2").get<std::vector<double>>();
  }
  cfg.seed = j.value("seed", cfg.seed);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.jobs = j.value("jobs", cfg.jobs);
  return cfg;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  try {
    return detail::config_from_json_unchecked(j);
  } catch (const json::exception& e) {
    // A value of the wrong shape is a configuration problem, not an
    // internal one; keep the failure in the config error class.
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

/// Applies one "dotted.path=value" override onto a config's JSON form.
/// Values parse as JSON when possible, otherwise as strings, so
/// `attack.epsilon=0.15` and `dataset.kind=adult` both work.
inline void apply_override(json& j, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos
                                                   ? std::string::npos
                                                   : dot - start);
    if (key.empty()) throw ConfigError("empty key in override: " + assignment);
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

/// Named profiles layered over the defaults (and over each other, in order).
inline void apply_preset(ExperimentConfig& cfg, const std::string& name) {
  if (name == "synthetic") {
    cfg.dataset.kind = "synthetic";
    cfg.criterion = FairnessCriterion::equalized_tpr;
    cfg.tau = 0.05;
    cfg.convention = FairnessConvention::pairwise_tpr;
  } else if (name == "adult-tpr") {
    cfg.dataset.kind = "adult";
    cfg.dataset.balance = true;
    cfg.criterion = FairnessCriterion::equalized_tpr;
    cfg.tau = 0.05;
    cfg.convention = FairnessConvention::pairwise_tpr;
    cfg.attack.d = 9.0;
    cfg.attack.fixed_z = 1;
  } else if (name == "adult-treatment") {
    cfg.dataset.kind = "adult";
    cfg.dataset.balance = true;
    cfg.criterion = FairnessCriterion::equalized_treatment;
    cfg.tau = 0.2;
    cfg.convention = FairnessConvention::pairwise_pr;
    cfg.attack.d = 9.0;
    cfg.attack.fixed_z = 1;
  } else if (name == "compas-tpr") {
    cfg.dataset.kind = "compas";
    cfg.dataset.balance = false;
    cfg.criterion = FairnessCriterion::equalized_tpr;
    cfg.tau = 0.15;
    cfg.convention = FairnessConvention::max_dev_tpr;
    cfg.attack.d = 6.0;
    cfg.attack.fixed_z = 1;
  } else if (name == "d9") {
    cfg.attack.d = 9.0;
  } else if (name == "d6") {
    cfg.attack.d = 6.0;
  } else if (name == "eps10") {
    cfg.attack.epsilon = 0.10;
  } else if (name == "eps15") {
    cfg.attack.epsilon = 0.15;
  } else if (name == "eps20") {
    cfg.attack.epsilon = 0.20;
  } else {
    throw ConfigError("unknown preset: " + name);
  }
}

inline std::string config_fingerprint(const ExperimentConfig& cfg) {
  // Where artifacts land and how many workers ran are execution details;
  // the fingerprint identifies the experiment itself.
  json j = to_json(cfg);
  j.erase("out_dir");
  j.erase("jobs");
  return hex64(fnv1a64(j.dump()));
}

// ---------------------------------------------------------------------------
// Built-in reference values
// ---------------------------------------------------------------------------

/// Published results the harness compares against when a grid cell matches.
/// Key: (table id, attack kind, fixed z or -1, epsilon in percent, defense).
struct ReferenceEntry {
  double accuracy = 0.0;
  double fairness = 0.0;
};

inline const std::map<std::tuple<std::string, std::string, int, int, std::string>,
                      ReferenceEntry>&
reference_table() {
  using Key = std::tuple<std::string, std::string, int, int, std::string>;
  static const std::map<Key, ReferenceEntry> table = {
      // Balanced census dataset, pairwise-TPR fairness.
      {{"adult", "none", -1, 0, "none"}, {0.817, 0.963}},
      {{"adult", "label_flip", -1, 10, "none"}, {0.805, 0.966}},
      {{"adult", "label_flip", -1, 20, "none"}, {0.800, 0.968}},
      {{"adult", "attr_flip", -1, 10, "none"}, {0.812, 0.945}},
      {{"adult", "attr_flip", -1, 20, "none"}, {0.804, 0.951}},
      {{"adult", "none", -1, 0, "sever"}, {0.812, 0.960}},
      {{"adult", "label_flip", -1, 10, "sever"}, {0.805, 0.967}},
      {{"adult", "label_flip", -1, 20, "sever"}, {0.803, 0.960}},
      {{"adult", "attr_flip", -1, 10, "sever"}, {0.813, 0.937}},
      {{"adult", "attr_flip", -1, 20, "sever"}, {0.803, 0.944}},
      {{"adult", "none", -1, 0, "rfc"}, {0.811, 0.959}},
      {{"adult", "label_flip", -1, 10, "rfc"}, {0.807, 0.973}},
      {{"adult", "label_flip", -1, 20, "rfc"}, {0.796, 0.966}},
      {{"adult", "attr_flip", -1, 10, "rfc"}, {0.805, 0.967}},
      {{"adult", "attr_flip", -1, 20, "rfc"}, {0.802, 0.965}},
      {{"adult", "min_max", 0, 10, "none"}, {0.801, 0.969}},
      {{"adult", "min_max", 1, 10, "none"}, {0.797, 0.864}},
      {{"adult", "f_attack", 0, 10, "none"}, {0.769, 0.966}},
      {{"adult", "f_attack", 1, 10, "none"}, {0.796, 0.804}},
      {{"adult", "f_attack_star", -1, 10, "none"}, {0.799, 0.799}},
      {{"adult", "min_max", 0, 10, "sever"}, {0.800, 0.960}},
      {{"adult", "min_max", 1, 10, "sever"}, {0.795, 0.954}},
      {{"adult", "f_attack", 0, 10, "sever"}, {0.778, 0.945}},
      {{"adult", "f_attack", 1, 10, "sever"}, {0.773, 0.937}},
      {{"adult", "f_attack_star", -1, 10, "sever"}, {0.772, 0.956}},
      {{"adult", "min_max", 0, 10, "rfc"}, {0.802, 0.967}},
      {{"adult", "min_max", 1, 10, "rfc"}, {0.811, 0.946}},
      {{"adult", "f_attack", 0, 10, "rfc"}, {0.803, 0.950}},
      {{"adult", "f_attack", 1, 10, "rfc"}, {0.808, 0.952}},
      {{"adult", "f_attack_star", -1, 10, "rfc"}, {0.809, 0.951}},
      {{"adult", "min_max", 0, 15, "none"}, {0.792, 0.961}},
      {{"adult", "min_max", 1, 15, "none"}, {0.787, 0.837}},
      {{"adult", "f_attack", 0, 15, "none"}, {0.686, 0.953}},
      {{"adult", "f_attack", 1, 15, "none"}, {0.775, 0.779}},
      {{"adult", "f_attack_star", -1, 15, "none"}, {0.788, 0.760}},
      {{"adult", "min_max", 0, 15, "sever"}, {0.792, 0.959}},
      {{"adult", "min_max", 1, 15, "sever"}, {0.783, 0.978}},
      {{"adult", "f_attack", 0, 15, "sever"}, {0.765, 0.952}},
      {{"adult", "f_attack", 1, 15, "sever"}, {0.755, 0.909}},
      {{"adult", "f_attack_star", -1, 15, "sever"}, {0.765, 0.927}},
      {{"adult", "min_max", 0, 15, "rfc"}, {0.801, 0.954}},
      {{"adult", "min_max", 1, 15, "rfc"}, {0.796, 0.941}},
      {{"adult", "f_attack", 0, 15, "rfc"}, {0.800, 0.963}},
      {{"adult", "f_attack", 1, 15, "rfc"}, {0.795, 0.947}},
      {{"adult", "f_attack_star", -1, 15, "rfc"}, {0.802, 0.945}},
      // Earlier unbalanced census run with the k-NN baseline.
      {{"adult-preliminary", "none", -1, 0, "none"}, {0.811, 0.962}},
      {{"adult-preliminary", "min_max", 0, 10, "none"}, {0.801, 0.958}},
      {{"adult-preliminary", "min_max", 1, 10, "none"}, {0.799, 0.851}},
      {{"adult-preliminary", "f_attack", 0, 10, "none"}, {0.768, 0.956}},
      {{"adult-preliminary", "f_attack", 1, 10, "none"}, {0.793, 0.803}},
      {{"adult-preliminary", "none", -1, 0, "knn"}, {0.794, 0.952}},
      {{"adult-preliminary", "min_max", 0, 10, "knn"}, {0.681, 0.936}},
      {{"adult-preliminary", "min_max", 1, 10, "knn"}, {0.680, 0.904}},
      {{"adult-preliminary", "f_attack", 0, 10, "knn"}, {0.655, 0.951}},
      {{"adult-preliminary", "f_attack", 1, 10, "knn"}, {0.695, 0.895}},
      {{"adult-preliminary", "none", -1, 0, "sever"}, {0.812, 0.969}},
      {{"adult-preliminary", "min_max", 0, 10, "sever"}, {0.798, 0.958}},
      {{"adult-preliminary", "min_max", 1, 10, "sever"}, {0.797, 0.967}},
      {{"adult-preliminary", "f_attack", 0, 10, "sever"}, {0.773, 0.942}},
      {{"adult-preliminary", "f_attack", 1, 10, "sever"}, {0.772, 0.943}},
      // Recidivism dataset, max-deviation-TPR fairness.
      {{"compas", "none", -1, 0, "none"}, {0.656, 0.865}},
      {{"compas", "label_flip", -1, 10, "none"}, {0.655, 0.866}},
      {{"compas", "label_flip", -1, 20, "none"}, {0.664, 0.836}},
      {{"compas", "attr_flip", -1, 10, "none"}, {0.677, 0.839}},
      {{"compas", "attr_flip", -1, 20, "none"}, {0.665, 0.847}},
      {{"compas", "none", -1, 0, "sever"}, {0.650, 0.854}},
      {{"compas", "label_flip", -1, 10, "sever"}, {0.677, 0.833}},
      {{"compas", "label_flip", -1, 20, "sever"}, {0.674, 0.835}},
      {{"compas", "attr_flip", -1, 10, "sever"}, {0.674, 0.835}},
      {{"compas", "attr_flip", -1, 20, "sever"}, {0.667, 0.835}},
      {{"compas", "none", -1, 0, "rfc"}, {0.661, 0.850}},
      {{"compas", "label_flip", -1, 10, "rfc"}, {0.676, 0.859}},
      {{"compas", "label_flip", -1, 20, "rfc"}, {0.682, 0.841}},
      {{"compas", "attr_flip", -1, 10, "rfc"}, {0.685, 0.850}},
      {{"compas", "attr_flip", -1, 20, "rfc"}, {0.667, 0.856}},
      {{"compas", "min_max", 0, 10, "none"}, {0.649, 0.845}},
      {{"compas", "min_max", 1, 10, "none"}, {0.645, 0.837}},
      {{"compas", "f_attack", 0, 10, "none"}, {0.665, 0.832}},
      {{"compas", "f_attack", 1, 10, "none"}, {0.630, 0.860}},
      {{"compas", "f_attack_star", -1, 10, "none"}, {0.661, 0.826}},
      {{"compas", "min_max", 0, 10, "sever"}, {0.634, 0.865}},
      {{"compas", "min_max", 1, 10, "sever"}, {0.630, 0.859}},
      {{"compas", "f_attack", 0, 10, "sever"}, {0.634, 0.845}},
      {{"compas", "f_attack", 1, 10, "sever"}, {0.627, 0.840}},
      {{"compas", "f_attack_star", -1, 10, "sever"}, {0.664, 0.826}},
      {{"compas", "min_max", 0, 10, "rfc"}, {0.656, 0.863}},
      {{"compas", "min_max", 1, 10, "rfc"}, {0.661, 0.834}},
      {{"compas", "f_attack", 0, 10, "rfc"}, {0.668, 0.853}},
      {{"compas", "f_attack", 1, 10, "rfc"}, {0.667, 0.866}},
      {{"compas", "f_attack_star", -1, 10, "rfc"}, {0.673, 0.845}},
      {{"compas", "min_max", 0, 15, "none"}, {0.676, 0.802}},
      {{"compas", "min_max", 1, 15, "none"}, {0.644, 0.863}},
      {{"compas", "f_attack", 0, 15, "none"}, {0.665, 0.802}},
      {{"compas", "f_attack", 1, 15, "none"}, {0.630, 0.860}},
      {{"compas", "f_attack_star", -1, 15, "none"}, {0.642, 0.831}},
      {{"compas", "min_max", 0, 15, "sever"}, {0.621, 0.880}},
      {{"compas", "min_max", 1, 15, "sever"}, {0.620, 0.880}},
      {{"compas", "f_attack", 0, 15, "sever"}, {0.585, 0.890}},
      {{"compas", "f_attack", 1, 15, "sever"}, {0.606, 0.887}},
      {{"compas", "f_attack_star", -1, 15, "sever"}, {0.663, 0.845}},
      {{"compas", "min_max", 0, 15, "rfc"}, {0.676, 0.852}},
      {{"compas", "min_max", 1, 15, "rfc"}, {0.659, 0.843}},
      {{"compas", "f_attack", 0, 15, "rfc"}, {0.653, 0.848}},
      {{"compas", "f_attack", 1, 15, "rfc"}, {0.645, 0.847}},
      {{"compas", "f_attack_star", -1, 15, "rfc"}, {0.672, 0.841}},
  };
  return table;
}

/// Looks up the published (accuracy, fairness) for a configured cell, if the
/// built-in tables contain it. Flip and no-attack cells ignore z; no-attack
/// cells ignore epsilon.
inline std::optional<ReferenceEntry> reference_lookup(const ExperimentConfig& cfg) {
  std::string table_id = cfg.dataset.reference;
  if (table_id.empty()) {
    if (cfg.dataset.kind == "adult") table_id = "adult";
    else if (cfg.dataset.kind == "compas") table_id = "compas";
    else return std::nullopt;
  }
  const std::string& kind = cfg.attack.kind;
  int z = -1;
  if ((kind == "min_max" || kind == "f_attack") && cfg.attack.fixed_z)
    z = *cfg.attack.fixed_z;
  const int eps_pct =
      kind == "none" ? 0
                     : static_cast<int>(std::llround(cfg.attack.epsilon * 100.0));
  const auto it = reference_table().find({table_id, kind, z, eps_pct, cfg.defense.kind});
  if (it == reference_table().end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// Report and trace serialization
// ---------------------------------------------------------------------------

inline json report_to_json(const EvalReport& report) {
  json j;
  j["schema_version"] = kRecordSchemaVersion;
  j["accuracy"] = report.accuracy;
  j["fairness"] = report.fairness;
  j["convention"] = report.convention;
  j["groups"] = report.groups;
  j["group_tpr"] = report.group_tpr;
  j["group_pr"] = report.group_pr;
  j["overall_tpr"] = report.overall_tpr;
  j["overall_pr"] = report.overall_pr;
  j["detection_precision"] =
      report.detection_precision ? json(*report.detection_precision) : json();
  j["detection_recall"] =
      report.detection_recall ? json(*report.detection_recall) : json();
  j["config_fingerprint"] = report.config_fingerprint;
  j["seed"] = report.seed;
  return j;
}

namespace detail {

inline std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace detail

inline std::string format_report_text(const EvalReport& report) {
  std::ostringstream out;
  out << "accuracy            " << detail::fixed4(report.accuracy) << "\n";
  out << "fairness            " << detail::fixed4(report.fairness) << "  ("
      << report.convention << ")\n";
  out << "group TPR          ";
  for (std::size_t j = 0; j < report.groups.size(); ++j)
    out << "  z=" << report.groups[j] << ": " << detail::fixed4(report.group_tpr[j]);
  out << "  overall: " << detail::fixed4(report.overall_tpr) << "\n";
  out << "group PR           ";
  for (std::size_t j = 0; j < report.groups.size(); ++j)
    out << "  z=" << report.groups[j] << ": " << detail::fixed4(report.group_pr[j]);
  out << "  overall: " << detail::fixed4(report.overall_pr) << "\n";
  out << "detection           ";
  if (report.detection_precision)
    out << "precision " << detail::fixed4(*report.detection_precision);
  else
    out << "precision n/a";
  if (report.detection_recall)
    out << "  recall " << detail::fixed4(*report.detection_recall);
  else
    out << "  recall n/a";
  out << "\n";
  out << "config fingerprint  " << report.config_fingerprint << "\n";
  out << "seed                " << report.seed << "\n";
  return out.str();
}

inline json trace_to_json(const SanitizationTrace& trace) {
  json j;
  j["schema_version"] = kRecordSchemaVersion;
  json iters = json::array();
  for (const RfcIteration& it : trace.iterations) {
    json cand = json::array();
    for (const CandidateRecord& c : it.candidates) {
      json entry = {{"y", c.y},
                    {"z", c.z},
                    {"sign", std::string(1, c.sign)},
                    {"set_size", c.set_size},
                    {"evaluated", c.evaluated},
                    {"score", c.evaluated ? json(c.score) : json()},
                    {"note", c.note}};
      cand.push_back(std::move(entry));
    }
    iters.push_back({{"incumbent_score", it.incumbent_score},
                     {"accepted", it.accepted},
                     {"chosen_y", it.chosen_y},
                     {"chosen_z", it.chosen_z},
                     {"chosen_sign", std::string(1, it.chosen_sign)},
                     {"chosen_score", it.chosen_score},
                     {"removed", it.removed},
                     {"candidates", std::move(cand)}});
  }
  j["iterations"] = std::move(iters);
  j["removed"] = trace.removed;
  j["retained_count"] = trace.retained.size();
  j["retained"] = trace.retained;
  return j;
}

inline SanitizationTrace trace_from_json(const json& j) {
  SanitizationTrace trace;
  for (const json& itj : j.at("iterations")) {
    RfcIteration it;
    it.incumbent_score = itj.at("incumbent_score").get<double>();
    it.accepted = itj.at("accepted").get<bool>();
    it.chosen_y = itj.at("chosen_y").get<int>();
    it.chosen_z = itj.at("chosen_z").get<int>();
    it.chosen_sign = itj.at("chosen_sign").get<std::string>().at(0);
    it.chosen_score = itj.at("chosen_score").get<double>();
    it.removed = itj.at("removed").get<std::vector<std::size_t>>();
    for (const json& cj : itj.at("candidates")) {
      CandidateRecord c;
      c.y = cj.at("y").get<int>();
      c.z = cj.at("z").get<int>();
      c.sign = cj.at("sign").get<std::string>().at(0);
      c.set_size = cj.at("set_size").get<std::size_t>();
      c.evaluated = cj.at("evaluated").get<bool>();
      c.score = c.evaluated ? cj.at("score").get<double>()
                            : -std::numeric_limits<double>::infinity();
      c.note = cj.value("note", std::string());
      it.candidates.push_back(std::move(c));
    }
    trace.iterations.push_back(std::move(it));
  }
  trace.removed = j.at("removed").get<std::vector<std::size_t>>();
  trace.retained = j.at("retained").get<std::vector<std::size_t>>();
  return trace;
}

inline std::string format_trace_text(const SanitizationTrace& trace) {
  std::ostringstream out;
  out << "sanitization trace: " << trace.iterations.size() << " iteration(s), "
      << trace.removed.size() << " row(s) removed, " << trace.retained.size()
      << " retained\n";
  for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
    const RfcIteration& it = trace.iterations[i];
    out << "iteration " << (i + 1) << "  (incumbent "
        << detail::fixed4(it.incumbent_score) << ")\n";
    out << "  cell   sign  size  score      note\n";
    for (const CandidateRecord& c : it.candidates) {
      out << "  y=" << c.y << ",z=" << c.z << "  " << c.sign << "     ";
      char size_buf[16];
      std::snprintf(size_buf, sizeof(size_buf), "%-5zu", c.set_size);
      out << size_buf << " ";
      if (c.evaluated)
        out << detail::fixed4(c.score) << "    ";
      else
        out << "-         ";
      out << c.note << "\n";
    }
    if (it.accepted)
      out << "  accepted: y=" << it.chosen_y << ",z=" << it.chosen_z << " sign "
          << it.chosen_sign << " score " << detail::fixed4(it.chosen_score)
          << ", removed " << it.removed.size() << " row(s)\n";
    else
      out << "  stopped: best candidate did not improve enough\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

struct RunResult {
  EvalReport report;
  LinearModel model;
  std::string run_dir;
  json manifest;
};

namespace detail {

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << content;
}

inline std::string resolved_out_dir(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv(kOutDirEnvVar); env && *env) return env;
  return cfg.out_dir;
}

inline SplitSpec make_split_spec(const ExperimentConfig& cfg, std::uint64_t seed) {
  SplitSpec spec;
  spec.train = cfg.dataset.split_train;
  spec.validation = cfg.dataset.split_validation;
  spec.test = cfg.dataset.split_test;
  spec.stratified = cfg.dataset.stratified;
  spec.seed = seed;
  return spec;
}

inline TrainConfig base_train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig base;
  base.learning_rate = cfg.learning_rate;
  base.epochs = cfg.epochs;
  base.norm_cap = cfg.norm_cap;
  base.surrogate_temperature = cfg.surrogate_temperature;
  base.seed = seed;
  return base;
}

inline std::vector<TrainConfig> make_grid(const ExperimentConfig& cfg,
                                          const TrainConfig& base) {
  if (cfg.grid_penalties.empty() || cfg.grid_l2.empty())
    throw ConfigError("grid: penalty and l2 lists must be nonempty");
  std::vector<TrainConfig> grid;
  for (double p : cfg.grid_penalties) {
    for (double l2 : cfg.grid_l2) {
      TrainConfig point = base;
      point.fairness_penalty = p;
      point.l2_weight = l2;
      grid.push_back(point);
    }
  }
  return grid;
}

}  // namespace detail

/// Executes load -> balance -> split -> attack (train only) -> defense ->
/// model selection on the clean validation split -> evaluation on the clean
/// test split, writing every artifact under a per-run directory. Stage
/// failures surface as StageError and are recorded in the manifest. The
/// FAIRSAN_OUT environment variable overrides the output root unless the
/// caller (e.g. the grid runner, which already resolved it) disables that.
inline RunResult run_experiment(const ExperimentConfig& cfg,
                                bool use_env_override = true) {
  const std::string fingerprint = config_fingerprint(cfg);
  const std::string out_root =
      use_env_override ? detail::resolved_out_dir(cfg) : cfg.out_dir;
  const std::string run_dir = out_root + "/run-" + fingerprint;

  json manifest;
  manifest["schema_version"] = kRecordSchemaVersion;
  manifest["library_version"] = kVersion;
  manifest["config"] = to_json(cfg);
  manifest["config_fingerprint"] = fingerprint;
  const std::uint64_t seed_split = derive_seed(cfg.seed, 1);
  const std::uint64_t seed_balance = derive_seed(cfg.seed, 2);
  const std::uint64_t seed_data = derive_seed(cfg.seed, 3);
  const std::uint64_t seed_attack = derive_seed(cfg.seed, 4);
  const std::uint64_t seed_train = derive_seed(cfg.seed, 5);
  manifest["seeds"] = {{"master", cfg.seed},
                       {"split", seed_split},
                       {"balance", seed_balance},
                       {"data", seed_data},
                       {"attack", seed_attack},
                       {"train", seed_train}};
  json& stages = manifest["stages"];
  for (const char* s : {"ingest", "attack", "defense", "train", "evaluate", "io"})
    stages[s] = "pending";

  auto fail = [&](const std::string& stage, int code,
                  const std::string& message) -> StageError {
    stages[stage] = "failed";
    manifest["error"] = {{"stage", stage}, {"message", message}};
    try {
      std::filesystem::create_directories(run_dir);
      detail::write_text_file(run_dir + "/manifest.json", manifest.dump(2) + "\n");
    } catch (...) {
      // The manifest is best-effort once the pipeline is already failing.
    }
    return StageError(stage, code, stage + ": " + message);
  };

  // --- ingest ---------------------------------------------------------------
  Dataset train, validation, test;
  try {
    const SplitSpec split_spec = detail::make_split_spec(cfg, seed_split);
    if (cfg.dataset.kind == "adult" || cfg.dataset.kind == "compas") {
      if (cfg.dataset.path.empty())
        throw ConfigError("dataset.path is required for kind " + cfg.dataset.kind);
      const DataBundle bundle =
          cfg.dataset.kind == "adult"
              ? load_adult(cfg.dataset.path, split_spec, cfg.dataset.balance, seed_balance)
              : load_compas(cfg.dataset.path, split_spec, cfg.dataset.balance,
                            seed_balance);
      train = bundle.train;
      validation = bundle.validation;
      test = bundle.test;
      manifest["ingest_report"] = {
          {"rows_total", bundle.report.rows_total},
          {"rows_dropped_missing", bundle.report.rows_dropped_missing},
          {"rows_dropped_unmapped_group", bundle.report.rows_dropped_unmapped_group},
          {"rows_used", bundle.report.rows_used}};
    } else if (cfg.dataset.kind == "synthetic") {
      BiasedSyntheticSpec synth;
      synth.n = cfg.dataset.synth_n;
      synth.dim = cfg.dataset.synth_dim;
      synth.separation = cfg.dataset.synth_separation;
      synth.group_bias = cfg.dataset.synth_group_bias;
      synth.seed = seed_data;
      Dataset full = synth_biased(synth);
      if (cfg.dataset.balance) full = balance_classes(full, seed_balance);
      const SplitResult parts = split(full, split_spec);
      train = parts.train;
      validation = parts.validation;
      test = parts.test;
    } else if (cfg.dataset.kind == "generic_csv") {
      if (cfg.dataset.path.empty())
        throw ConfigError("dataset.path is required for kind generic_csv");
      Dataset full = load_numeric_csv(cfg.dataset.path, cfg.dataset.label_column,
                                      cfg.dataset.group_column);
      if (cfg.dataset.balance) full = balance_classes(full, seed_balance);
      const SplitResult parts = split(full, split_spec);
      train = parts.train;
      validation = parts.validation;
      test = parts.test;
    } else {
      throw ConfigError("unknown dataset.kind: " + cfg.dataset.kind);
    }
    stages["ingest"] = "ok";
  } catch (const std::exception& e) {
    throw fail("ingest", kExitIngest, e.what());
  }

  const std::uint64_t hash_train_clean = dataset_hash(train);
  const std::uint64_t hash_validation = dataset_hash(validation);
  const std::uint64_t hash_test = dataset_hash(test);
  manifest["sizes"] = {{"train", train.size()},
                       {"validation", validation.size()},
                       {"test", test.size()},
                       {"dim", train.dim()}};

  FairnessSpec fspec;
  fspec.criterion = cfg.criterion;
  fspec.tau = cfg.tau;
  ValScoreSpec vspec;
  vspec.lambda = cfg.valscore_lambda;
  vspec.tau = cfg.tau;

  // --- attack ---------------------------------------------------------------
  PoisonResult attacked;
  bool attack_ran = false;
  try {
    AttackConfig acfg;
    acfg.epsilon = cfg.attack.epsilon;
    acfg.fixed_z = cfg.attack.fixed_z;
    acfg.lambda = cfg.attack.lambda;
    acfg.eta = cfg.attack.eta;
    acfg.n_burn = cfg.attack.n_burn;
    acfg.tau = cfg.attack.tau ? *cfg.attack.tau : cfg.tau;
    acfg.seed = seed_attack;
    const std::string& kind = cfg.attack.kind;
    if (kind == "none") {
      attacked.dataset = train;
    } else if (kind == "label_flip") {
      attacked = label_flip(train, cfg.attack.epsilon, seed_attack, cfg.attack.insert);
      attack_ran = true;
    } else if (kind == "attr_flip") {
      attacked = attr_flip(train, cfg.attack.epsilon, seed_attack, cfg.attack.insert);
      attack_ran = true;
    } else if (kind == "min_max") {
      attacked = min_max_attack(train, class_center_feasible(train, cfg.attack.d), acfg);
      attack_ran = true;
    } else if (kind == "f_attack") {
      attacked =
          f_attack(train, class_center_feasible(train, cfg.attack.d), fspec, acfg);
      attack_ran = true;
    } else if (kind == "f_attack_star") {
      attacked = f_attack_star(train, cfg.attack.d, fspec, acfg);
      attack_ran = true;
    } else if (kind == "replay") {
      if (cfg.attack.replay_path.empty())
        throw ConfigError("attack.replay_path is required for kind replay");
      attacked = apply_poison(train, read_poison_csv(cfg.attack.replay_path, train.dim()));
      attack_ran = true;
    } else {
      throw ConfigError("unknown attack.kind: " + kind);
    }
    if (attack_ran && cfg.attack.insert && attacked.dataset.size() >= train.size()) {
      // Clean-prefix immutability check (skipped for in-place flip modes).
      std::vector<std::size_t> prefix(train.size());
      for (std::size_t i = 0; i < prefix.size(); ++i) prefix[i] = i;
      if (dataset_hash(attacked.dataset.subset(prefix)) != hash_train_clean)
        throw AttackError("attack mutated clean rows", 0);
    }
    stages["attack"] = "ok";
  } catch (const std::exception& e) {
    throw fail("attack", kExitAttack, e.what());
  }
  manifest["poison_count"] = attacked.poison.size();

  // --- defense --------------------------------------------------------------
  const TrainConfig base_cfg = detail::base_train_config(cfg, seed_train);
  const std::vector<TrainConfig> grid = detail::make_grid(cfg, base_cfg);
  Dataset defended = attacked.dataset;
  std::vector<std::size_t> removed_indices;
  std::optional<RfcResult> rfc;
  bool sever_degenerate = false;
  std::size_t sever_rounds_run = 0;
  try {
    const std::string& kind = cfg.defense.kind;
    if (kind == "none") {
      // keep the attacked set
    } else if (kind == "knn") {
      KnnResult r =
          knn_defense(attacked.dataset, cfg.defense.knn_k, cfg.defense.knn_fraction);
      defended = std::move(r.dataset);
      removed_indices = std::move(r.removed_indices);
    } else if (kind == "sever") {
      TrainConfig sever_cfg = base_cfg;
      sever_cfg.fairness_penalty = cfg.defense.sever_penalty;
      const TrainFn train_fn = [&](const Dataset& d) {
        return train_fair(d, fspec, sever_cfg);
      };
      SeverResult r = sever_defense(attacked.dataset, train_fn, cfg.defense.sever_rounds,
                                    cfg.defense.sever_fraction);
      defended = std::move(r.dataset);
      removed_indices = std::move(r.removed_indices);
      sever_degenerate = r.degenerate_warning;
      sever_rounds_run = r.rounds_run;
    } else if (kind == "rfc") {
      RfcOptions opts;
      opts.max_iterations = cfg.defense.rfc_iterations;
      opts.min_improvement = cfg.defense.rfc_min_improvement;
      opts.q_percentile = cfg.defense.rfc_percentile;
      opts.jobs = cfg.jobs;
      rfc = rfc_defense(attacked.dataset, validation, fspec, vspec, grid, opts);
      removed_indices = rfc->trace.removed;
      defended = attacked.dataset.subset(rfc->trace.retained);
    } else {
      throw ConfigError("unknown defense.kind: " + kind);
    }
    stages["defense"] = "ok";
  } catch (const std::exception& e) {
    throw fail("defense", kExitDefense, e.what());
  }
  manifest["defense_removed"] = removed_indices.size();
  if (cfg.defense.kind == "sever") {
    manifest["sever"] = {{"degenerate_warning", sever_degenerate},
                         {"rounds_run", sever_rounds_run}};
  }

  // --- train ----------------------------------------------------------------
  SweepResult sweep;
  LinearModel model;
  try {
    if (rfc) {
      sweep = rfc->final_sweep;
      model = rfc->model;
    } else {
      sweep = hyper_sweep(defended, validation, fspec, vspec, grid, cfg.jobs);
      model = sweep.best;
    }
    stages["train"] = "ok";
  } catch (const std::exception& e) {
    throw fail("train", kExitTrain, e.what());
  }

  // --- evaluate -------------------------------------------------------------
  EvalReport report;
  std::optional<DetectionQuality> detection;
  try {
    if (attack_ran)
      detection = detection_quality(removed_indices, attacked.poison_indices);
    report = build_report(model, test, cfg.convention,
                          detection ? &*detection : nullptr, fingerprint, cfg.seed);
    if (dataset_hash(validation) != hash_validation)
      throw DefenseError("validation split changed during the pipeline");
    if (dataset_hash(test) != hash_test)
      throw DefenseError("test split changed during the pipeline");
    stages["evaluate"] = "ok";
  } catch (const std::exception& e) {
    throw fail("evaluate", kExitEvaluate, e.what());
  }

  manifest["hashes"] = {{"train_clean", hex64(hash_train_clean)},
                        {"train_attacked", hex64(dataset_hash(attacked.dataset))},
                        {"train_defended", hex64(dataset_hash(defended))},
                        {"validation", hex64(hash_validation)},
                        {"validation_after", hex64(dataset_hash(validation))},
                        {"test", hex64(hash_test)},
                        {"test_after", hex64(dataset_hash(test))}};

  if (const std::optional<ReferenceEntry> ref = reference_lookup(cfg)) {
    manifest["reference"] = {{"accuracy", ref->accuracy},
                             {"fairness", ref->fairness},
                             {"delta_accuracy", report.accuracy - ref->accuracy},
                             {"delta_fairness", report.fairness - ref->fairness}};
  }

  // --- io -------------------------------------------------------------------
  try {
    std::filesystem::create_directories(run_dir);
    json sweep_json;
    sweep_json["schema_version"] = kRecordSchemaVersion;
    sweep_json["best_index"] = sweep.best_index;
    json table = json::array();
    for (const SweepEntry& entry : sweep.table) {
      table.push_back({{"fairness_penalty", entry.config.fairness_penalty},
                       {"l2_weight", entry.config.l2_weight},
                       {"trained", entry.trained},
                       {"error", entry.error},
                       {"train_accuracy", entry.train_accuracy},
                       {"train_violations", entry.train_violations},
                       {"train_objective", entry.train_objective},
                       {"val_score", entry.score}});
    }
    sweep_json["table"] = std::move(table);
    detail::write_text_file(run_dir + "/sweep.json", sweep_json.dump(2) + "\n");

    detail::write_text_file(run_dir + "/report.json",
                            report_to_json(report).dump(2) + "\n");
    detail::write_text_file(run_dir + "/report.txt", format_report_text(report));
    save_model(model, run_dir + "/model.txt");
    if (attack_ran)
      write_poison_csv(attacked.poison, train.dim(), run_dir + "/poison.csv");
    if (!removed_indices.empty() || cfg.defense.kind != "none") {
      json defense_json = {{"schema_version", kRecordSchemaVersion},
                           {"kind", cfg.defense.kind},
                           {"removed_indices", removed_indices}};
      detail::write_text_file(run_dir + "/defense.json", defense_json.dump(2) + "\n");
    }
    if (rfc) {
      detail::write_text_file(run_dir + "/trace.json",
                              trace_to_json(rfc->trace).dump(2) + "\n");
      detail::write_text_file(run_dir + "/trace.txt", format_trace_text(rfc->trace));
    }
    stages["io"] = "ok";
    detail::write_text_file(run_dir + "/manifest.json", manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    throw fail("io", kExitIo, e.what());
  }

  RunResult result;
  result.report = report;
  result.model = model;
  result.run_dir = run_dir;
  result.manifest = manifest;
  return result;
}

// ---------------------------------------------------------------------------
// Grid runner
// ---------------------------------------------------------------------------

/// Attack axis entries are "kind" or "kind:z=V", e.g. "f_attack:z=1".
struct GridAxes {
  std::vector<std::string> attacks = {"none"};
  std::vector<std::string> defenses = {"none"};
  std::vector<double> epsilons = {0.1};
};

struct GridCell {
  std::string attack;
  std::string defense;
  double epsilon = 0.0;
  bool ok = false;
  std::string error;
  EvalReport report;
  std::string run_dir;
  std::optional<ReferenceEntry> reference;
};

struct GridOutcome {
  std::vector<GridCell> cells;
  std::string table_text;
  std::string grid_dir;
};

namespace detail {

inline void parse_attack_axis(const std::string& entry, AttackSpecConfig& attack) {
  const std::size_t colon = entry.find(':');
  attack.kind = entry.substr(0, colon == std::string::npos ? entry.size() : colon);
  if (colon != std::string::npos) {
    const std::string suffix = entry.substr(colon + 1);
    if (suffix.rfind("z=", 0) != 0)
      throw ConfigError("attack axis entry must be kind or kind:z=V, got " + entry);
    attack.fixed_z = std::stoi(suffix.substr(2));
  }
}

}  // namespace detail

/// Cartesian product of the axes over a template config. Cell failures are
/// recorded and do not stop the grid. Emits an aligned table (one block per
/// epsilon), one structured record per cell, and reference deltas where the
/// built-in tables have the cell.
inline GridOutcome run_grid(const ExperimentConfig& base, const GridAxes& axes,
                            int jobs = 1) {
  if (axes.attacks.empty() || axes.defenses.empty() || axes.epsilons.empty())
    throw ConfigError("grid axes must be nonempty");

  struct CellPlan {
    ExperimentConfig config;
    std::string attack;
    std::string defense;
    double epsilon;
  };
  std::vector<CellPlan> plans;
  for (double eps : axes.epsilons) {
    for (const std::string& attack : axes.attacks) {
      for (const std::string& defense : axes.defenses) {
        CellPlan plan;
        plan.config = base;
        plan.attack = attack;
        plan.defense = defense;
        plan.epsilon = eps;
        detail::parse_attack_axis(attack, plan.config.attack);
        plan.config.attack.epsilon = eps;
        plan.config.defense.kind = defense;
        if (jobs > 1) plan.config.jobs = 1;  // cells parallelize, not their insides
        plans.push_back(std::move(plan));
      }
    }
  }

  const std::string out_root = detail::resolved_out_dir(base);
  const std::string grid_dir =
      out_root + "/grid-" + hex64(fnv1a64(to_json(base).dump()));

  GridOutcome outcome;
  outcome.grid_dir = grid_dir;
  outcome.cells.resize(plans.size());
  auto run_cell = [&](std::size_t i) {
    GridCell& cell = outcome.cells[i];
    cell.attack = plans[i].attack;
    cell.defense = plans[i].defense;
    cell.epsilon = plans[i].epsilon;
    ExperimentConfig cfg = plans[i].config;
    cfg.out_dir = grid_dir + "/cells";
    cell.reference = reference_lookup(cfg);
    try {
      RunResult run = run_experiment(cfg, /*use_env_override=*/false);
      cell.ok = true;
      cell.report = run.report;
      cell.run_dir = run.run_dir;
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
  };

  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(plans.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < plans.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < plans.size(); i = next.fetch_add(1))
          run_cell(i);
      });
    }
    for (std::thread& th : pool) th.join();
  }

  // Aligned text table: one block per epsilon, rows = defenses, cols = attacks.
  std::ostringstream table;
  std::size_t cell_index = 0;
  for (double eps : axes.epsilons) {
    table << "epsilon = " << detail::fixed4(eps) << "  (acc/fair)\n";
    std::size_t width = 12;
    for (const std::string& a : axes.attacks) width = std::max(width, a.size() + 2);
    table << std::string(14, ' ');
    for (const std::string& a : axes.attacks)
      table << a << std::string(width - a.size(), ' ');
    table << "\n";
    for (std::size_t d = 0; d < axes.defenses.size(); ++d) {
      const std::string& defense = axes.defenses[d];
      table << defense << std::string(14 - std::min<std::size_t>(13, defense.size()), ' ');
      for (std::size_t a = 0; a < axes.attacks.size(); ++a) {
        const GridCell& cell =
            outcome.cells[cell_index + a * axes.defenses.size() + d];
        std::string text = cell.ok ? detail::fixed4(cell.report.accuracy) + "/" +
                                         detail::fixed4(cell.report.fairness)
                                   : std::string("FAILED");
        table << text << std::string(width > text.size() ? width - text.size() : 1, ' ');
      }
      table << "\n";
    }
    table << "\n";
    cell_index += axes.attacks.size() * axes.defenses.size();
  }
  outcome.table_text = table.str();

  try {
    std::filesystem::create_directories(grid_dir);
    detail::write_text_file(grid_dir + "/table.txt", outcome.table_text);
    std::ostringstream records;
    for (const GridCell& cell : outcome.cells) {
      json rec = {{"schema_version", kRecordSchemaVersion},
                  {"attack", cell.attack},
                  {"defense", cell.defense},
                  {"epsilon", cell.epsilon},
                  {"ok", cell.ok},
                  {"error", cell.error},
                  {"run_dir", cell.run_dir}};
      if (cell.ok) {
        rec["accuracy"] = cell.report.accuracy;
        rec["fairness"] = cell.report.fairness;
      }
      if (cell.reference) {
        rec["reference"] = {{"accuracy", cell.reference->accuracy},
                            {"fairness", cell.reference->fairness}};
      }
      records << rec.dump() << "\n";
    }
    detail::write_text_file(grid_dir + "/cells.jsonl", records.str());

    std::ostringstream deltas;
    deltas << "epsilon,attack,defense,accuracy,ref_accuracy,delta_accuracy,"
              "fairness,ref_fairness,delta_fairness\n";
    for (const GridCell& cell : outcome.cells) {
      if (!cell.ok || !cell.reference) continue;
      deltas << cell.epsilon << ',' << cell.attack << ',' << cell.defense << ','
             << format_double(cell.report.accuracy) << ','
             << format_double(cell.reference->accuracy) << ','
             << format_double(cell.report.accuracy - cell.reference->accuracy) << ','
             << format_double(cell.report.fairness) << ','
             << format_double(cell.reference->fairness) << ','
             << format_double(cell.report.fairness - cell.reference->fairness) << "\n";
    }
    detail::write_text_file(grid_dir + "/reference_deltas.csv", deltas.str());
  } catch (const std::exception& e) {
    throw StageError("io", kExitIo, e.what());
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Certification record serialization
// ---------------------------------------------------------------------------

inline json certification_to_json(const CertificationRecord& record) {
  json j;
  j["schema_version"] = kRecordSchemaVersion;
  j["n"] = record.spec.n;
  j["K"] = record.spec.K;
  j["gamma"] = record.spec.gamma;
  j["sigma"] = record.spec.sigma;
  j["dim"] = record.spec.dim;
  j["seed"] = record.spec.seed;
  j["trials"] = record.trials;
  j["bound"] = record.bound;
  j["condition_met"] = record.condition_met;
  j["passes"] = record.passes;
  j["certified"] = record.certified;
  json trials = json::array();
  for (const CertificationTrial& t : record.trial_records) {
    trials.push_back({{"seed", t.seed},
                      {"mean_sq_bad", t.mean_sq_bad},
                      {"mean_sq_clean", t.mean_sq_clean},
                      {"difference", t.difference},
                      {"slack", t.slack},
                      {"pass", t.pass}});
  }
  j["trial_records"] = std::move(trials);
  return j;
}

inline std::string format_certification_text(const CertificationRecord& record) {
  std::ostringstream out;
  out << "spectral separation certification\n";
  out << "  K = " << record.spec.K << ", gamma^2 = "
      << record.spec.gamma * record.spec.gamma << ", sigma = " << record.spec.sigma
      << ", dim = " << record.spec.dim << ", n = " << record.spec.n << "\n";
  out << "  bound = " << record.bound << "\n";
  if (!record.condition_met)
    out << "  condition not met (gamma^2 <= (K+1)^2/(K-1)); bound not asserted\n";
  out << "  trials passed: " << record.passes << "/" << record.trials << "\n";
  for (std::size_t i = 0; i < record.trial_records.size(); ++i) {
    const CertificationTrial& t = record.trial_records[i];
    out << "  trial " << (i + 1) << ": difference " << detail::fixed4(t.difference)
        << " vs bound - slack " << detail::fixed4(record.bound - t.slack) << " -> "
        << (t.pass ? "pass" : "FAIL") << "\n";
  }
  out << (record.certified ? "  CERTIFIED\n" : "  NOT CERTIFIED\n");
  return out.str();
}

}  // namespace fairsan
