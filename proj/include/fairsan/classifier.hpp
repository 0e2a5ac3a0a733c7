#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fairsan/csv.hpp"
#include "fairsan/dataset.hpp"
#include "fairsan/error.hpp"
#include "fairsan/vecmath.hpp"

namespace fairsan {

struct LinearModel {
  Vec w;
  double b = 0.0;
};

enum class FairnessCriterion {
  equalized_tpr,       // true-positive rates match across groups
  equalized_treatment  // positive-prediction rates match across groups
};

inline std::string to_string(FairnessCriterion c) {
  return c == FairnessCriterion::equalized_tpr ? "equalized_tpr" : "equalized_treatment";
}

inline FairnessCriterion fairness_criterion_from_string(const std::string& s) {
  if (s == "equalized_tpr") return FairnessCriterion::equalized_tpr;
  if (s == "equalized_treatment") return FairnessCriterion::equalized_treatment;
  throw ConfigError("unknown fairness criterion: " + s);
}

struct FairnessSpec {
  FairnessCriterion criterion = FairnessCriterion::equalized_tpr;
  double tau = 0.05;
  std::vector<int> groups;  // empty: use the groups present in the dataset
};

struct TrainConfig {
  double fairness_penalty = 0.0;  // weight on the clipped smooth violations
  double learning_rate = 0.5;     // base step; decays as 1/sqrt(t)
  int epochs = 300;
  double l2_weight = 1e-3;
  double norm_cap = 10.0;
  double surrogate_temperature = 0.1;
  std::uint64_t seed = 0;
};

struct ValScoreSpec {
  double lambda = 3.0;
  double tau = 0.05;
};

inline double decision(const LinearModel& model, const Vec& x) {
  if (model.w.size() != x.size())
    throw DimensionError("decision: model dim " + std::to_string(model.w.size()) +
                         " vs point dim " + std::to_string(x.size()));
  return dot(model.w, x) + model.b;
}

/// Positive classification iff the score is strictly positive.
inline int classify(const LinearModel& model, const Vec& x) {
  return decision(model, x) > 0.0 ? 1 : 0;
}

inline double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

/// log(1 + exp(-margin)) without overflow for large |margin|.
inline double logistic_loss(double margin) {
  if (margin >= 0.0) return std::log1p(std::exp(-margin));
  return -margin + std::log1p(std::exp(margin));
}

inline double sample_loss(const LinearModel& model, const Sample& s) {
  const double yy = s.y == 1 ? 1.0 : -1.0;
  return logistic_loss(yy * decision(model, s.x));
}

namespace detail {

inline std::vector<int> effective_groups(const Dataset& data, const FairnessSpec& spec) {
  return spec.groups.empty() ? data.groups() : spec.groups;
}

}  // namespace detail

/// Index sets over which the per-group and overall rates are averaged:
/// positives only for equalized-TPR, everyone for equalized treatment.
struct GroupSupport {
  std::vector<int> groups;
  std::vector<std::vector<std::size_t>> per_group;
  std::vector<std::size_t> overall;
};

inline GroupSupport fairness_support(const Dataset& data, const FairnessSpec& spec) {
  GroupSupport sup;
  sup.groups = detail::effective_groups(data, spec);
  const bool tpr = spec.criterion == FairnessCriterion::equalized_tpr;
  sup.per_group.assign(sup.groups.size(), {});
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data.sample(i);
    if (tpr && s.y != 1) continue;
    sup.overall.push_back(i);
    for (std::size_t j = 0; j < sup.groups.size(); ++j) {
      if (s.z == sup.groups[j]) {
        sup.per_group[j].push_back(i);
        break;
      }
    }
  }
  for (std::size_t j = 0; j < sup.groups.size(); ++j) {
    if (sup.per_group[j].empty())
      throw MissingSupportError("no supporting samples for group " +
                                    std::to_string(sup.groups[j]) +
                                    (tpr ? " (no positive labels)" : ""),
                                sup.groups[j]);
  }
  return sup;
}

/// Hard-indicator rates: fraction of positive classifications over each
/// support set.
struct GroupRates {
  std::vector<double> per_group;
  double overall = 0.0;
};

inline GroupRates group_rates(const LinearModel& model, const Dataset& data,
                              const GroupSupport& sup) {
  GroupRates rates;
  rates.per_group.assign(sup.groups.size(), 0.0);
  for (std::size_t j = 0; j < sup.groups.size(); ++j) {
    double hits = 0.0;
    for (std::size_t i : sup.per_group[j]) hits += classify(model, data.sample(i).x);
    rates.per_group[j] = hits / static_cast<double>(sup.per_group[j].size());
  }
  double hits = 0.0;
  for (std::size_t i : sup.overall) hits += classify(model, data.sample(i).x);
  rates.overall = hits / static_cast<double>(sup.overall.size());
  return rates;
}

/// Per-group violations g_j = |rate_j - rate_overall| with hard indicators.
inline Vec fairness_violations(const LinearModel& model, const Dataset& data,
                               const FairnessSpec& spec) {
  const GroupSupport sup = fairness_support(data, spec);
  const GroupRates rates = group_rates(model, data, sup);
  Vec g(rates.per_group.size(), 0.0);
  for (std::size_t j = 0; j < g.size(); ++j)
    g[j] = std::abs(rates.per_group[j] - rates.overall);
  return g;
}

/// Value and gradient of a differentiable function of (w, b).
struct Objective {
  double value = 0.0;
  Vec grad_w;
  double grad_b = 0.0;
};

/// Mean logistic loss over one or two sample lists (the second is optional so
/// callers can score a clean set plus a growing poison set without copying),
/// plus l2_weight * ||w||^2.
inline Objective data_objective(const LinearModel& model,
                                const std::vector<Sample>& a,
                                const std::vector<Sample>* b = nullptr,
                                double l2_weight = 0.0) {
  const std::size_t n = a.size() + (b ? b->size() : 0);
  if (n == 0) throw EmptyInputError("data_objective: no samples");
  Objective obj;
  obj.grad_w.assign(model.w.size(), 0.0);
  auto accumulate = [&](const Sample& s) {
    const double yy = s.y == 1 ? 1.0 : -1.0;
    const double margin = yy * decision(model, s.x);
    obj.value += logistic_loss(margin);
    const double dmargin = -sigmoid(-margin);  // d loss / d margin
    const double ds = yy * dmargin;            // d loss / d score
    add_scaled(obj.grad_w, s.x, ds);
    obj.grad_b += ds;
  };
  for (const Sample& s : a) accumulate(s);
  if (b)
    for (const Sample& s : *b) accumulate(s);
  const double inv_n = 1.0 / static_cast<double>(n);
  obj.value *= inv_n;
  scale(obj.grad_w, inv_n);
  obj.grad_b *= inv_n;
  obj.value += l2_weight * squared_norm(model.w);
  add_scaled(obj.grad_w, model.w, 2.0 * l2_weight);
  return obj;
}

/// lambda * sum_j (g~_j - tau)+ where g~_j replaces the positive-prediction
/// indicator with sigmoid(score / temperature). Support sets are precomputed
/// so attack loops can reuse them across iterations.
inline Objective smooth_penalty(const LinearModel& model, const Dataset& data,
                                const GroupSupport& sup, double tau, double lambda,
                                double temperature) {
  Objective obj;
  obj.grad_w.assign(model.w.size(), 0.0);
  if (lambda == 0.0 || sup.groups.empty()) return obj;
  if (temperature <= 0.0) throw ConfigError("smooth_penalty: temperature must be > 0");

  std::vector<double> p(data.size(), 0.0), dp(data.size(), 0.0);
  for (std::size_t i : sup.overall) {
    const double s = decision(model, data.sample(i).x) / temperature;
    p[i] = sigmoid(s);
    dp[i] = p[i] * (1.0 - p[i]) / temperature;  // d p_i / d score
  }
  auto mean_over = [&](const std::vector<std::size_t>& idx) {
    double m = 0.0;
    for (std::size_t i : idx) m += p[i];
    return m / static_cast<double>(idx.size());
  };
  const double overall = mean_over(sup.overall);

  std::vector<double> coef(data.size(), 0.0);
  double overall_coef = 0.0;
  for (std::size_t j = 0; j < sup.groups.size(); ++j) {
    const double diff = mean_over(sup.per_group[j]) - overall;
    const double g = std::abs(diff);
    if (g <= tau) continue;
    obj.value += lambda * (g - tau);
    const double sign = diff > 0.0 ? 1.0 : -1.0;
    const double cj = sign * lambda / static_cast<double>(sup.per_group[j].size());
    for (std::size_t i : sup.per_group[j]) coef[i] += cj;
    overall_coef -= sign * lambda / static_cast<double>(sup.overall.size());
  }
  if (overall_coef != 0.0)
    for (std::size_t i : sup.overall) coef[i] += overall_coef;
  for (std::size_t i : sup.overall) {
    if (coef[i] == 0.0) continue;
    const double c = coef[i] * dp[i];
    add_scaled(obj.grad_w, data.sample(i).x, c);
    obj.grad_b += c;
  }
  return obj;
}

/// Full training objective: mean loss + l2 + smooth fairness penalty.
inline Objective training_objective(const LinearModel& model, const Dataset& train,
                                    const FairnessSpec& spec, const TrainConfig& cfg,
                                    const GroupSupport* sup = nullptr) {
  Objective obj = data_objective(model, train.samples(), nullptr, cfg.l2_weight);
  if (cfg.fairness_penalty > 0.0) {
    GroupSupport local;
    if (!sup) {
      local = fairness_support(train, spec);
      sup = &local;
    }
    const Objective pen = smooth_penalty(model, train, *sup, spec.tau,
                                         cfg.fairness_penalty,
                                         cfg.surrogate_temperature);
    obj.value += pen.value;
    add_scaled(obj.grad_w, pen.grad_w, 1.0);
    obj.grad_b += pen.grad_b;
  }
  return obj;
}

/// Rescales w onto the norm ball when it escapes. The bias is not capped.
inline void project_norm_cap(LinearModel& model, double cap) {
  if (cap <= 0.0) return;
  const double n = norm(model.w);
  if (std::isinf(n))
    // cap / inf would silently zero the weights; surface the divergence.
    throw TrainingError("project_norm_cap: weight norm overflowed");
  if (n > cap) scale(model.w, cap / n);
}

/// Full-batch gradient descent with 1/sqrt(t) step decay from zero init.
/// Deterministic; the fairness penalty term is skipped entirely when its
/// weight is zero.
inline LinearModel train_fair(const Dataset& train, const FairnessSpec& spec,
                              const TrainConfig& cfg) {
  if (train.empty()) throw EmptyInputError("train_fair: empty training set");
  if (!(train.has_label(0) && train.has_label(1)))
    throw InsufficientClassError("train_fair: need at least one sample per class");
  if (cfg.epochs <= 0 || cfg.learning_rate <= 0.0)
    throw ConfigError("train_fair: epochs and learning_rate must be positive");
  if (cfg.fairness_penalty < 0.0 || cfg.l2_weight < 0.0)
    throw ConfigError("train_fair: penalty weights must be nonnegative");

  GroupSupport sup;
  if (cfg.fairness_penalty > 0.0) sup = fairness_support(train, spec);

  LinearModel model;
  model.w.assign(train.dim(), 0.0);
  model.b = 0.0;
  for (int t = 1; t <= cfg.epochs; ++t) {
    const Objective obj = training_objective(model, train, spec, cfg,
                                             cfg.fairness_penalty > 0.0 ? &sup : nullptr);
    if (!std::isfinite(obj.value) || !all_finite(obj.grad_w) || !std::isfinite(obj.grad_b))
      throw TrainingError("train_fair: objective diverged at epoch " +
                          std::to_string(t) + " (value = " + std::to_string(obj.value) +
                          ")");
    const double eta = cfg.learning_rate / std::sqrt(static_cast<double>(t));
    add_scaled(model.w, obj.grad_w, -eta);
    model.b -= eta * obj.grad_b;
    project_norm_cap(model, cfg.norm_cap);
  }
  if (!all_finite(model.w) || !std::isfinite(model.b))
    throw TrainingError("train_fair: non-finite final parameters");
  return model;
}

inline double accuracy(const LinearModel& model, const Dataset& data) {
  if (data.empty()) throw EmptyInputError("accuracy: empty dataset");
  double hits = 0.0;
  for (const Sample& s : data.samples())
    if (classify(model, s.x) == s.y) hits += 1.0;
  return hits / static_cast<double>(data.size());
}

/// Validation selection score: accuracy minus lambda-weighted clipped
/// violations, all with hard indicators.
inline double val_score(const LinearModel& model, const Dataset& val,
                        const ValScoreSpec& vspec, const FairnessSpec& fspec) {
  if (val.empty()) throw EmptyInputError("val_score: empty validation set");
  const Vec g = fairness_violations(model, val, fspec);
  double penalty = 0.0;
  for (double gj : g) penalty += std::max(0.0, gj - vspec.tau);
  return accuracy(model, val) - vspec.lambda * penalty;
}

struct SweepEntry {
  TrainConfig config;
  bool trained = false;
  std::string error;  // set when trained is false
  double train_accuracy = 0.0;
  Vec train_violations;
  double train_objective = 0.0;
  double score = 0.0;  // val_score; only meaningful when trained
};

struct SweepResult {
  LinearModel best;
  TrainConfig best_config;
  std::size_t best_index = 0;
  std::vector<SweepEntry> table;
};

/// Default grid: fairness penalty from off to strong, crossed with three l2
/// strengths. Order fixes the tie-break.
inline std::vector<TrainConfig> default_grid(const TrainConfig& base = {}) {
  const double penalties[] = {0.0, 0.3, 1.0, 3.0, 10.0};
  const double l2s[] = {1e-4, 1e-3, 1e-2};
  std::vector<TrainConfig> grid;
  for (double p : penalties) {
    for (double l2 : l2s) {
      TrainConfig cfg = base;
      cfg.fairness_penalty = p;
      cfg.l2_weight = l2;
      grid.push_back(cfg);
    }
  }
  return grid;
}

/// Trains every grid point, scores each on the validation set, and returns
/// the first-in-grid-order argmax. Points may train in parallel; failures are
/// recorded per entry and skipped unless everything fails.
inline SweepResult hyper_sweep(const Dataset& train, const Dataset& val,
                               const FairnessSpec& fspec, const ValScoreSpec& vspec,
                               const std::vector<TrainConfig>& grid, int jobs = 1) {
  if (grid.empty()) throw ConfigError("hyper_sweep: empty grid");

  std::vector<SweepEntry> table(grid.size());
  std::vector<LinearModel> models(grid.size());
  auto run_point = [&](std::size_t i) {
    SweepEntry& entry = table[i];
    entry.config = grid[i];
    try {
      models[i] = train_fair(train, fspec, grid[i]);
      entry.train_accuracy = accuracy(models[i], train);
      entry.train_violations = fairness_violations(models[i], train, fspec);
      entry.train_objective =
          training_objective(models[i], train, fspec, grid[i]).value;
      entry.score = val_score(models[i], val, vspec, fspec);
      entry.trained = true;
    } catch (const std::exception& e) {
      entry.trained = false;
      entry.error = e.what();
    }
  };

  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(grid.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < grid.size(); ++i) run_point(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < grid.size(); i = next.fetch_add(1))
          run_point(i);
      });
    }
    for (std::thread& th : pool) th.join();
  }

  SweepResult result;
  bool found = false;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!table[i].trained) continue;
    if (!found || table[i].score > table[result.best_index].score) {
      result.best_index = i;
      found = true;
    }
  }
  if (!found) {
    std::string first = table.empty() ? "" : table.front().error;
    throw TrainingError("hyper_sweep: all " + std::to_string(grid.size()) +
                        " grid points failed; first error: " + first);
  }
  result.best = models[result.best_index];
  result.best_config = grid[result.best_index];
  result.table = std::move(table);
  return result;
}

inline void save_model_stream(const LinearModel& model, std::ostream& out) {
  out << "fairsan-model 1\n";
  out << "dim " << model.w.size() << "\n";
  out << "w";
  for (double v : model.w) out << ' ' << format_double(v);
  out << "\nb " << format_double(model.b) << "\n";
}

inline void save_model(const LinearModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  save_model_stream(model, out);
}

inline LinearModel load_model_stream(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "fairsan-model" || version != 1)
    throw SchemaError("not a recognizable model file");
  std::string key;
  std::size_t dim = 0;
  if (!(in >> key >> dim) || key != "dim") throw SchemaError("model file: missing dim");
  LinearModel model;
  model.w.resize(dim);
  if (!(in >> key) || key != "w") throw SchemaError("model file: missing w");
  for (std::size_t i = 0; i < dim; ++i)
    if (!(in >> model.w[i])) throw SchemaError("model file: truncated w");
  if (!(in >> key >> model.b) || key != "b") throw SchemaError("model file: missing b");
  if (!all_finite(model.w) || !std::isfinite(model.b))
    throw SchemaError("model file: non-finite parameters");
  return model;
}

inline LinearModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return load_model_stream(in);
}

}  // namespace fairsan
