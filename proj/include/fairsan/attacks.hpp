#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "fairsan/classifier.hpp"
#include "fairsan/csv.hpp"
#include "fairsan/dataset.hpp"
#include "fairsan/error.hpp"
#include "fairsan/rng.hpp"
#include "fairsan/vecmath.hpp"

namespace fairsan {

/// Ball constraint on injectable samples: features must stay within distance
/// d of the matching class center (fixed-z attacks) or subgroup center.
struct FeasibleSet {
  enum class Mode { class_center, subgroup_center };
  Mode mode = Mode::class_center;
  double d = 0.0;
  std::map<int, Vec> class_centers;                  // y -> center
  std::map<std::pair<int, int>, Vec> subgroup_centers;  // (y, z) -> center
};

/// Ball around each class mean of the clean data.
inline FeasibleSet class_center_feasible(const Dataset& clean, double d) {
  if (d < 0.0) throw ConfigError("feasible set: d must be >= 0");
  FeasibleSet set;
  set.mode = FeasibleSet::Mode::class_center;
  set.d = d;
  for (int y : clean.labels()) set.class_centers[y] = class_center(clean, y);
  return set;
}

/// Ball around each (y, z) subgroup mean; every label x group cell must be
/// populated in the clean data.
inline FeasibleSet subgroup_center_feasible(const Dataset& clean, double d) {
  if (d < 0.0) throw ConfigError("feasible set: d must be >= 0");
  FeasibleSet set;
  set.mode = FeasibleSet::Mode::subgroup_center;
  set.d = d;
  for (int y : clean.labels())
    for (int z : clean.groups())
      set.subgroup_centers[{y, z}] = subgroup_center(clean, y, z);
  return set;
}

struct AttackConfig {
  double epsilon = 0.1;        // poison budget as a fraction of clean size
  std::optional<int> fixed_z;  // required for class_center feasible sets
  double lambda = 3.0;         // fairness-penalty weight in the inner model
  double eta = 0.05;           // base step size, decays as 1/sqrt(t)
  std::optional<std::size_t> n_burn;  // warm-up steps; default 2 * budget
  double tau = 0.05;           // tolerance inside the penalty
  std::uint64_t seed = 0;
};

/// Poison budget: epsilon * n rounded half up.
inline std::size_t poison_count(std::size_t n, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0))
    throw ConfigError("epsilon must be in [0, 1)");
  return static_cast<std::size_t>(
      std::floor(epsilon * static_cast<double>(n) + 0.5));
}

/// Outcome of any attack: the poisoned dataset, the emitted poison rows, and
/// their indices. The index list is evaluation-side bookkeeping; attacked
/// datasets carry no marker the defenses could read.
struct PoisonResult {
  Dataset dataset;
  std::vector<Sample> poison;
  std::vector<std::size_t> poison_indices;
};

/// Appends round(epsilon * n) label-flipped copies of uniformly drawn clean
/// rows. With insert = false, flips that many distinct rows in place instead.
inline PoisonResult label_flip(const Dataset& clean, double epsilon,
                               std::uint64_t seed, bool insert = true) {
  if (!(clean.has_label(0) && clean.has_label(1)))
    throw InsufficientClassError("label_flip: need both labels 0 and 1 present");
  const std::size_t budget = poison_count(clean.size(), epsilon);
  PoisonResult result;
  Rng rng = make_rng(derive_seed(seed, 0x4c464c50));  // "LFLP"
  if (insert) {
    std::uniform_int_distribution<std::size_t> pick(0, clean.size() - 1);
    for (std::size_t k = 0; k < budget; ++k) {
      Sample s = clean.sample(pick(rng));
      s.y = 1 - s.y;
      result.poison.push_back(std::move(s));
    }
    result.dataset = clean.appended(result.poison);
    for (std::size_t k = 0; k < budget; ++k)
      result.poison_indices.push_back(clean.size() + k);
  } else {
    std::vector<Sample> rows(clean.samples());
    result.poison_indices = sample_indices(clean.size(), budget, rng);
    for (std::size_t i : result.poison_indices) {
      rows[i].y = 1 - rows[i].y;
      result.poison.push_back(rows[i]);
    }
    result.dataset = Dataset(std::move(rows), clean.dim(), clean.labels(), clean.groups());
  }
  return result;
}

/// As label_flip but reassigns the sensitive attribute: binary groups flip,
/// larger group sets draw uniformly from the other groups.
inline PoisonResult attr_flip(const Dataset& clean, double epsilon,
                              std::uint64_t seed, bool insert = true) {
  const std::vector<int>& groups = clean.groups();
  if (groups.size() < 2)
    throw InsufficientClassError("attr_flip: need at least 2 groups to reassign");
  const std::size_t budget = poison_count(clean.size(), epsilon);
  Rng rng = make_rng(derive_seed(seed, 0x41464c50));  // "AFLP"
  auto reassign = [&](Sample& s) {
    std::vector<int> others;
    for (int g : groups)
      if (g != s.z) others.push_back(g);
    if (others.size() == 1) {
      s.z = others.front();
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
      s.z = others[pick(rng)];
    }
  };
  PoisonResult result;
  if (insert) {
    std::uniform_int_distribution<std::size_t> pick(0, clean.size() - 1);
    for (std::size_t k = 0; k < budget; ++k) {
      Sample s = clean.sample(pick(rng));
      reassign(s);
      result.poison.push_back(std::move(s));
    }
    result.dataset = clean.appended(result.poison);
    for (std::size_t k = 0; k < budget; ++k)
      result.poison_indices.push_back(clean.size() + k);
  } else {
    std::vector<Sample> rows(clean.samples());
    result.poison_indices = sample_indices(clean.size(), budget, rng);
    for (std::size_t i : result.poison_indices) {
      reassign(rows[i]);
      result.poison.push_back(rows[i]);
    }
    result.dataset = Dataset(std::move(rows), clean.dim(), clean.labels(), clean.groups());
  }
  return result;
}

/// Closed-form argmax of the logistic loss over the feasible balls: for each
/// candidate (y, z) the maximizer is the center pushed distance d against the
/// correctly-classified direction, x* = mu - d * (y~ / ||w||) * w. Ties go to
/// the smaller y, then smaller z.
inline Sample worst_feasible_sample(const LinearModel& model, const FeasibleSet& feasible,
                                    std::optional<int> fixed_z = std::nullopt) {
  if (!all_finite(model.w) || !std::isfinite(model.b))
    throw DegenerateModelError("worst_feasible_sample: non-finite model");
  const double wn = norm(model.w);
  if (wn == 0.0)
    throw DegenerateModelError(
        "worst_feasible_sample: ||w|| = 0, every ball point has equal loss");

  struct Candidate {
    int y;
    int z;
    const Vec* center;
  };
  std::vector<Candidate> candidates;
  if (feasible.mode == FeasibleSet::Mode::class_center) {
    if (!fixed_z)
      throw ConfigError("worst_feasible_sample: class_center mode requires fixed_z");
    for (const auto& [y, center] : feasible.class_centers)
      candidates.push_back({y, *fixed_z, &center});
  } else {
    for (const auto& [yz, center] : feasible.subgroup_centers) {
      if (fixed_z && yz.second != *fixed_z) continue;
      candidates.push_back({yz.first, yz.second, &center});
    }
  }
  if (candidates.empty())
    throw ConfigError("worst_feasible_sample: no feasible candidates for the given z");

  bool have_best = false;
  double best_loss = 0.0;
  Sample best;
  for (const Candidate& c : candidates) {  // map order: ascending (y, z)
    const double yy = c.y == 1 ? 1.0 : -1.0;
    Vec x = *c.center;
    add_scaled(x, model.w, -feasible.d * yy / wn);
    const double loss = logistic_loss(yy * (dot(model.w, x) + model.b));
    if (!have_best || loss > best_loss) {
      have_best = true;
      best_loss = loss;
      best = Sample{std::move(x), c.y, c.z};
    }
  }
  return best;
}

namespace detail {

/// Shared loop behind min_max_attack, f_attack, and f_attack_star: alternate
/// the closed-form inner maximization with one descent step of the attacker's
/// model on loss(clean + poison) plus, when lambda > 0, the smooth fairness
/// penalty measured on the clean set only. Samples found after the warm-up
/// join the poison set; the step at iteration t sees only earlier poison.
inline PoisonResult run_minmax_attack(const Dataset& clean, const FeasibleSet& feasible,
                                      const FairnessSpec* fspec, const AttackConfig& cfg) {
  if (clean.empty()) throw EmptyInputError("attack: empty clean dataset");
  const std::size_t budget = poison_count(clean.size(), cfg.epsilon);
  if (budget == 0)
    throw ConfigError("attack: epsilon * n rounds to zero poison samples");
  if (!(cfg.eta > 0.0)) throw ConfigError("attack: eta must be > 0");
  if (cfg.lambda < 0.0) throw ConfigError("attack: lambda must be >= 0");
  if (feasible.mode == FeasibleSet::Mode::class_center && !cfg.fixed_z)
    throw ConfigError("attack: class_center feasible set requires fixed_z");
  if (cfg.fixed_z && !clean.has_group(*cfg.fixed_z))
    throw ConfigError("attack: fixed_z " + std::to_string(*cfg.fixed_z) +
                      " is not a group of the clean data");
  const std::size_t n_burn = cfg.n_burn ? *cfg.n_burn : 2 * budget;

  // Attacker's model state: warm-started with plain unconstrained training.
  TrainConfig warm;
  warm.fairness_penalty = 0.0;
  warm.seed = cfg.seed;
  const FairnessSpec no_constraints;
  LinearModel model = train_fair(clean, fspec ? *fspec : no_constraints, warm);

  const bool use_penalty = cfg.lambda > 0.0 && fspec != nullptr;
  GroupSupport support;
  if (use_penalty) support = fairness_support(clean, *fspec);
  const TrainConfig defaults;

  PoisonResult result;
  result.poison.reserve(budget);
  const std::size_t total = n_burn + budget;
  for (std::size_t t = 1; t <= total; ++t) {
    Sample found = worst_feasible_sample(model, feasible, cfg.fixed_z);

    Objective obj = data_objective(model, clean.samples(), &result.poison, 0.0);
    if (use_penalty) {
      const Objective pen = smooth_penalty(model, clean, support, cfg.tau, cfg.lambda,
                                           defaults.surrogate_temperature);
      obj.value += pen.value;
      add_scaled(obj.grad_w, pen.grad_w, 1.0);
      obj.grad_b += pen.grad_b;
    }
    if (!std::isfinite(obj.value) || !all_finite(obj.grad_w) || !std::isfinite(obj.grad_b))
      throw AttackError("attack: non-finite objective at iteration " + std::to_string(t),
                        t);
    const double eta = cfg.eta / std::sqrt(static_cast<double>(t));
    add_scaled(model.w, obj.grad_w, -eta);
    model.b -= eta * obj.grad_b;
    project_norm_cap(model, defaults.norm_cap);
    if (!all_finite(model.w) || !std::isfinite(model.b))
      throw AttackError("attack: non-finite parameters at iteration " + std::to_string(t),
                        t);

    if (t > n_burn) result.poison.push_back(std::move(found));
  }

  result.dataset = clean.appended(result.poison);
  result.poison_indices.reserve(budget);
  for (std::size_t k = 0; k < budget; ++k)
    result.poison_indices.push_back(clean.size() + k);
  return result;
}

}  // namespace detail

/// Fairness-aware poisoning: min-max loop whose model update also descends
/// the clean-set fairness penalty, so the poison defeats fairness-constrained
/// training rather than plain training.
inline PoisonResult f_attack(const Dataset& clean, const FeasibleSet& feasible,
                             const FairnessSpec& spec, const AttackConfig& cfg) {
  return detail::run_minmax_attack(clean, feasible, &spec, cfg);
}

/// Plain min-max poisoning: identical loop with the fairness penalty off.
inline PoisonResult min_max_attack(const Dataset& clean, const FeasibleSet& feasible,
                                   const AttackConfig& cfg) {
  AttackConfig plain = cfg;
  plain.lambda = 0.0;
  return detail::run_minmax_attack(clean, feasible, nullptr, plain);
}

/// F-Attack over subgroup-centered balls with the group free per iteration:
/// the inner maximization chooses (x, y, z) jointly.
inline PoisonResult f_attack_star(const Dataset& clean, double d,
                                  const FairnessSpec& spec, const AttackConfig& cfg) {
  const FeasibleSet feasible = subgroup_center_feasible(clean, d);
  return detail::run_minmax_attack(clean, feasible, &spec, cfg);
}

// ---------------------------------------------------------------------------
// Poison-set audit files
// ---------------------------------------------------------------------------

inline void write_poison_csv(const std::vector<Sample>& poison, std::size_t dim,
                             std::ostream& out) {
  std::vector<std::string> header;
  for (std::size_t j = 0; j < dim; ++j) header.push_back("x" + std::to_string(j));
  header.push_back("y");
  header.push_back("z");
  write_csv_row(out, header);
  for (const Sample& s : poison) {
    std::vector<std::string> fields;
    fields.reserve(dim + 2);
    for (double v : s.x) fields.push_back(format_double(v));
    fields.push_back(std::to_string(s.y));
    fields.push_back(std::to_string(s.z));
    write_csv_row(out, fields);
  }
}

inline void write_poison_csv(const std::vector<Sample>& poison, std::size_t dim,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_poison_csv(poison, dim, out);
}

inline std::vector<Sample> read_poison_csv(const std::string& path,
                                           std::size_t expected_dim) {
  const CsvTable table = read_csv_file(path, /*has_header=*/true);
  if (table.header.size() != expected_dim + 2)
    throw SchemaError(path + ": expected " + std::to_string(expected_dim) +
                      " feature columns plus y and z");
  std::vector<Sample> poison;
  poison.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::vector<std::string>& row = table.rows[r];
    const std::size_t row_no = r + 1;
    if (row.size() != table.header.size())
      throw RowError("row " + std::to_string(row_no) + ": field count mismatch", row_no);
    Sample s;
    s.x.reserve(expected_dim);
    for (std::size_t j = 0; j < expected_dim; ++j)
      s.x.push_back(parse_double(trim(row[j]), row_no));
    s.y = static_cast<int>(parse_long(trim(row[expected_dim]), row_no));
    s.z = static_cast<int>(parse_long(trim(row[expected_dim + 1]), row_no));
    poison.push_back(std::move(s));
  }
  return poison;
}

/// Replays a previously exported poison set against a clean dataset.
inline PoisonResult apply_poison(const Dataset& clean, std::vector<Sample> poison) {
  PoisonResult result;
  result.dataset = clean.appended(poison);
  result.poison = std::move(poison);
  result.poison_indices.reserve(result.poison.size());
  for (std::size_t k = 0; k < result.poison.size(); ++k)
    result.poison_indices.push_back(clean.size() + k);
  return result;
}

}  // namespace fairsan
