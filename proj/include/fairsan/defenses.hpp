#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fairsan/classifier.hpp"
#include "fairsan/dataset.hpp"
#include "fairsan/error.hpp"
#include "fairsan/numerics.hpp"
#include "fairsan/vecmath.hpp"

namespace fairsan {

// ---------------------------------------------------------------------------
// k-NN distance filter
// ---------------------------------------------------------------------------

/// Distance from each sample to its k-th nearest neighbor within the same
/// class (self excluded). Large scores mark isolated points.
inline Vec knn_scores(const Dataset& dataset, std::size_t k) {
  if (dataset.empty()) throw EmptyInputError("knn_scores: empty dataset");
  if (k == 0) throw ConfigError("knn_scores: k must be >= 1");
  Vec scores(dataset.size(), 0.0);
  for (int y : dataset.labels()) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < dataset.size(); ++i)
      if (dataset.sample(i).y == y) members.push_back(i);
    if (members.size() <= k)
      throw InsufficientClassError("knn_scores: class " + std::to_string(y) + " has " +
                                   std::to_string(members.size()) +
                                   " samples, needs more than k = " + std::to_string(k));
    Vec dists(members.size() - 1);
    for (std::size_t a = 0; a < members.size(); ++a) {
      std::size_t filled = 0;
      for (std::size_t b = 0; b < members.size(); ++b) {
        if (b == a) continue;
        dists[filled++] = distance(dataset.sample(members[a]).x,
                                   dataset.sample(members[b]).x);
      }
      std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
      scores[members[a]] = dists[k - 1];
    }
  }
  return scores;
}

/// Indices of the `count` highest scores; among equal scores the higher index
/// is taken first, so lower indices survive ties. Returned ascending.
inline std::vector<std::size_t> top_score_indices(const Vec& scores, std::size_t count) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a > b;
  });
  order.resize(std::min(count, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

struct KnnResult {
  Dataset dataset;
  std::vector<std::size_t> removed_indices;
  Vec scores;
};

/// Drops the removal_fraction highest-scored samples (rounded half up).
inline KnnResult knn_defense(const Dataset& dataset, std::size_t k = 5,
                             double removal_fraction = 0.15) {
  if (!(removal_fraction >= 0.0 && removal_fraction < 1.0))
    throw ConfigError("knn_defense: removal_fraction must be in [0, 1)");
  KnnResult result;
  result.scores = knn_scores(dataset, k);
  const std::size_t count = static_cast<std::size_t>(
      std::floor(removal_fraction * static_cast<double>(dataset.size()) + 0.5));
  result.removed_indices = top_score_indices(result.scores, count);
  std::vector<char> removed(dataset.size(), 0);
  for (std::size_t i : result.removed_indices) removed[i] = 1;
  std::vector<std::size_t> keep;
  keep.reserve(dataset.size() - count);
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (!removed[i]) keep.push_back(i);
  result.dataset = dataset.subset(keep);
  return result;
}

// ---------------------------------------------------------------------------
// SEVER gradient-spectral filter
// ---------------------------------------------------------------------------

using TrainFn = std::function<LinearModel(const Dataset&)>;

struct SeverResult {
  Dataset dataset;
  std::vector<std::size_t> removed_indices;  // against the input dataset
  LinearModel model;
  bool degenerate_warning = false;
  std::size_t rounds_run = 0;
};

/// Iterated spectral filtering: train, project centered per-sample loss
/// gradients (over w and b) onto their top singular direction, drop the
/// largest squared projections, repeat. Stops early once no score exceeds
/// 3x the median — the remaining spread is considered benign.
inline SeverResult sever_defense(const Dataset& dataset, const TrainFn& train_fn,
                                 std::size_t rounds = 4,
                                 double removal_fraction_per_round = 0.075) {
  if (dataset.empty()) throw EmptyInputError("sever_defense: empty dataset");
  if (!(removal_fraction_per_round >= 0.0 && removal_fraction_per_round < 1.0))
    throw ConfigError("sever_defense: removal fraction must be in [0, 1)");

  SeverResult result;
  std::vector<std::size_t> current(dataset.size());
  for (std::size_t i = 0; i < current.size(); ++i) current[i] = i;
  Dataset working = dataset;

  for (std::size_t round = 0; round < rounds; ++round) {
    const LinearModel model = train_fn(working);
    ++result.rounds_run;

    Matrix grads;
    grads.reserve(working.size());
    for (const Sample& s : working.samples()) {
      const double yy = s.y == 1 ? 1.0 : -1.0;
      const double margin = yy * decision(model, s.x);
      const double ds = yy * -sigmoid(-margin);  // d loss / d score
      Vec row(working.dim() + 1, 0.0);
      for (std::size_t j = 0; j < working.dim(); ++j) row[j] = ds * s.x[j];
      row[working.dim()] = ds;  // bias coordinate
      grads.push_back(std::move(row));
    }
    const Matrix centered = center_rows(grads);

    Vec v;
    try {
      v = top_right_singular_vector(centered);
    } catch (const DegenerateMatrixError&) {
      result.degenerate_warning = true;
      result.model = model;
      result.dataset = working;
      return result;
    }
    Vec q(centered.size(), 0.0);
    for (std::size_t i = 0; i < centered.size(); ++i) {
      const double proj = dot(centered[i], v);
      q[i] = proj * proj;
    }

    const double median = percentile_threshold(q, 50.0);
    const double top = *std::max_element(q.begin(), q.end());
    if (top <= 3.0 * median) {
      result.model = model;
      result.dataset = working;
      return result;
    }

    const std::size_t count = static_cast<std::size_t>(std::floor(
        removal_fraction_per_round * static_cast<double>(working.size()) + 0.5));
    if (count == 0) {
      result.model = model;
      result.dataset = working;
      return result;
    }
    const std::vector<std::size_t> drop = top_score_indices(q, count);
    std::vector<char> removed(working.size(), 0);
    for (std::size_t i : drop) {
      removed[i] = 1;
      result.removed_indices.push_back(current[i]);
    }
    std::vector<std::size_t> keep;
    keep.reserve(working.size() - drop.size());
    for (std::size_t i = 0; i < working.size(); ++i)
      if (!removed[i]) keep.push_back(i);
    working = working.subset(keep);
    std::vector<std::size_t> next;
    next.reserve(keep.size());
    for (std::size_t i : keep) next.push_back(current[i]);
    current = std::move(next);
  }

  std::sort(result.removed_indices.begin(), result.removed_indices.end());
  result.model = train_fn(working);
  result.dataset = working;
  return result;
}

// ---------------------------------------------------------------------------
// Alignment scores and proposal sets
// ---------------------------------------------------------------------------

/// Signed projection of each centered row onto the top right singular vector.
/// Scores sum to zero because the rows are centered.
inline Vec alignment_scores(const CenteredMatrix& matrix) {
  const Vec v = top_right_singular_vector(matrix.rows);
  Vec q(matrix.rows.size(), 0.0);
  for (std::size_t i = 0; i < matrix.rows.size(); ++i) q[i] = dot(matrix.rows[i], v);
  return q;
}

/// Positions whose score clears the one-sided percentile threshold: plus
/// holds strictly-above-threshold positive scores, minus the mirror on
/// negated negatives. Thresholds are computed over each side separately, so
/// a sign-skewed score distribution still yields a small set per side.
struct PoisonSetPair {
  std::vector<std::size_t> plus;
  std::vector<std::size_t> minus;
  double gamma_plus = 0.0;   // meaningless when no positive scores exist
  double gamma_minus = 0.0;  // likewise for negatives
};

inline PoisonSetPair propose_poison_sets(const Vec& scores, double q_percentile = 90.0) {
  if (scores.empty()) throw EmptyInputError("propose_poison_sets: no scores");
  PoisonSetPair pair;
  Vec positives, negated;
  for (double q : scores) {
    if (q > 0.0) positives.push_back(q);
    if (q < 0.0) negated.push_back(-q);
  }
  if (!positives.empty()) {
    pair.gamma_plus = percentile_threshold(positives, q_percentile);
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] > 0.0 && scores[i] > pair.gamma_plus) pair.plus.push_back(i);
  }
  if (!negated.empty()) {
    pair.gamma_minus = percentile_threshold(negated, q_percentile);
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] < 0.0 && -scores[i] > pair.gamma_minus) pair.minus.push_back(i);
  }
  return pair;
}

// ---------------------------------------------------------------------------
// RFC online data sanitization
// ---------------------------------------------------------------------------

struct RfcOptions {
  std::size_t max_iterations = 8;
  double min_improvement = 1e-4;  // stop when the best candidate gains less
  double q_percentile = 90.0;
  int jobs = 1;                   // parallel candidate retraining
};

/// One proposal evaluated during an RFC iteration.
struct CandidateRecord {
  int y = 0;
  int z = 0;
  char sign = '+';            // '+': top positive scores, '-': top negative
  std::size_t set_size = 0;
  bool evaluated = false;     // false: empty proposal or failed retraining
  // ValScore with the set excluded; -inf sentinel while unevaluated.
  double score = -std::numeric_limits<double>::infinity();
  std::string note;
};

struct RfcIteration {
  std::vector<CandidateRecord> candidates;  // 2 per (y, z) cell, fixed order
  double incumbent_score = 0.0;             // before this iteration
  bool accepted = false;
  int chosen_y = 0;
  int chosen_z = 0;
  char chosen_sign = '+';
  double chosen_score = 0.0;
  std::vector<std::size_t> removed;  // original-train indices; empty if rejected
};

struct SanitizationTrace {
  std::vector<RfcIteration> iterations;
  std::vector<std::size_t> removed;   // union over accepted iterations, ascending
  std::vector<std::size_t> retained;  // final retained original indices
};

struct RfcResult {
  LinearModel model;
  SanitizationTrace trace;
  SweepResult final_sweep;
  TrainConfig iteration_config;  // fixed config used for candidate retraining
};

namespace detail {

struct RfcCandidateJob {
  std::size_t record_index = 0;
  std::vector<std::size_t> exclude;  // positions in the working dataset
};

inline void run_candidate_jobs(const Dataset& working, const Dataset& val,
                               const FairnessSpec& fspec, const ValScoreSpec& vspec,
                               const TrainConfig& cfg, std::vector<RfcCandidateJob>& jobs,
                               std::vector<CandidateRecord>& records, int workers) {
  auto run_one = [&](RfcCandidateJob& job) {
    CandidateRecord& rec = records[job.record_index];
    try {
      std::vector<char> drop(working.size(), 0);
      for (std::size_t i : job.exclude) drop[i] = 1;
      std::vector<std::size_t> keep;
      keep.reserve(working.size() - job.exclude.size());
      for (std::size_t i = 0; i < working.size(); ++i)
        if (!drop[i]) keep.push_back(i);
      const Dataset reduced = working.subset(keep);
      const LinearModel model = train_fair(reduced, fspec, cfg);
      rec.score = val_score(model, val, vspec, fspec);
      rec.evaluated = true;
    } catch (const std::exception& e) {
      rec.evaluated = false;
      rec.score = -std::numeric_limits<double>::infinity();
      rec.note = e.what();
    }
  };
  const int n_workers =
      std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  if (n_workers <= 1) {
    for (RfcCandidateJob& job : jobs) run_one(job);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (int t = 0; t < n_workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1))
          run_one(jobs[i]);
      });
    }
    for (std::thread& th : pool) th.join();
  }
}

}  // namespace detail

/// Online sanitization: each iteration scores every (y, z) cell along its top
/// spectral direction, proposes the extreme-score tails as poison candidates,
/// retrains without each candidate, and permanently removes the candidate
/// with the best validation ValScore — as long as it improves on the
/// incumbent. Candidate retraining uses the initial sweep winner's single
/// config; the final model is selected by a fresh full sweep on the retained
/// rows.
inline RfcResult rfc_defense(const Dataset& train, const Dataset& val,
                             const FairnessSpec& fspec, const ValScoreSpec& vspec,
                             const std::vector<TrainConfig>& grid,
                             const RfcOptions& opts = {}) {
  if (opts.max_iterations == 0) throw ConfigError("rfc_defense: need max_iterations >= 1");
  if (train.empty()) throw EmptyInputError("rfc_defense: empty training set");
  if (val.empty()) throw EmptyInputError("rfc_defense: empty validation set");

  RfcResult result;
  std::vector<std::size_t> current(train.size());
  for (std::size_t i = 0; i < current.size(); ++i) current[i] = i;
  Dataset working = train;

  const SweepResult initial = hyper_sweep(train, val, fspec, vspec, grid, opts.jobs);
  result.iteration_config = initial.best_config;
  double incumbent_score = initial.table[initial.best_index].score;

  for (std::size_t iter = 0; iter < opts.max_iterations; ++iter) {
    RfcIteration record;
    record.incumbent_score = incumbent_score;

    std::vector<detail::RfcCandidateJob> jobs;
    std::vector<SubgroupView> views = subgroup_partition(working);
    auto find_view = [&](int y, int z) -> const SubgroupView* {
      for (const SubgroupView& v : views)
        if (v.y == y && v.z == z) return &v;
      return nullptr;
    };
    std::vector<std::vector<std::size_t>> candidate_rows;  // working positions
    for (int y : working.labels()) {
      for (int z : working.groups()) {
        const SubgroupView* view = find_view(y, z);
        PoisonSetPair pair;
        std::string cell_note;
        std::vector<std::size_t> sources;
        if (!view) {
          cell_note = "empty subgroup";
        } else {
          try {
            const CenteredMatrix centered = center_matrix(working, *view);
            pair = propose_poison_sets(alignment_scores(centered), opts.q_percentile);
            sources = centered.source_indices;
          } catch (const DegenerateMatrixError& e) {
            cell_note = e.what();
          }
        }
        for (char sign : {'+', '-'}) {
          CandidateRecord rec;
          rec.y = y;
          rec.z = z;
          rec.sign = sign;
          const std::vector<std::size_t>& positions =
              sign == '+' ? pair.plus : pair.minus;
          std::vector<std::size_t> rows;
          rows.reserve(positions.size());
          for (std::size_t p : positions) rows.push_back(sources[p]);
          rec.set_size = rows.size();
          if (!cell_note.empty()) {
            rec.note = cell_note;
          } else if (rows.empty()) {
            rec.note = "empty proposal";
          } else {
            detail::RfcCandidateJob job;
            job.record_index = record.candidates.size();
            job.exclude = rows;
            jobs.push_back(std::move(job));
          }
          record.candidates.push_back(std::move(rec));
          candidate_rows.push_back(std::move(rows));
        }
      }
    }

    detail::run_candidate_jobs(working, val, fspec, vspec, result.iteration_config,
                               jobs, record.candidates, opts.jobs);

    std::size_t best = record.candidates.size();
    for (std::size_t c = 0; c < record.candidates.size(); ++c) {
      if (!record.candidates[c].evaluated) continue;
      if (best == record.candidates.size() ||
          record.candidates[c].score > record.candidates[best].score)
        best = c;
    }
    if (best == record.candidates.size()) {
      const bool any_proposed = std::any_of(
          record.candidates.begin(), record.candidates.end(),
          [](const CandidateRecord& r) { return r.set_size > 0; });
      if (any_proposed)
        throw DefenseError("rfc_defense: every candidate retraining failed");
      result.trace.iterations.push_back(std::move(record));
      break;  // nothing proposable anywhere: stop cleanly
    }

    const CandidateRecord& chosen = record.candidates[best];
    record.chosen_y = chosen.y;
    record.chosen_z = chosen.z;
    record.chosen_sign = chosen.sign;
    record.chosen_score = chosen.score;
    if (chosen.score - incumbent_score < opts.min_improvement) {
      record.accepted = false;
      result.trace.iterations.push_back(std::move(record));
      break;
    }

    record.accepted = true;
    const std::vector<std::size_t>& drop_rows = candidate_rows[best];
    std::vector<char> drop(working.size(), 0);
    for (std::size_t i : drop_rows) {
      drop[i] = 1;
      record.removed.push_back(current[i]);
    }
    std::sort(record.removed.begin(), record.removed.end());
    std::vector<std::size_t> keep;
    keep.reserve(working.size() - drop_rows.size());
    for (std::size_t i = 0; i < working.size(); ++i)
      if (!drop[i]) keep.push_back(i);
    working = working.subset(keep);
    std::vector<std::size_t> next;
    next.reserve(keep.size());
    for (std::size_t i : keep) next.push_back(current[i]);
    current = std::move(next);
    incumbent_score = chosen.score;
    result.trace.iterations.push_back(std::move(record));
  }

  for (const RfcIteration& it : result.trace.iterations)
    result.trace.removed.insert(result.trace.removed.end(), it.removed.begin(),
                                it.removed.end());
  std::sort(result.trace.removed.begin(), result.trace.removed.end());
  result.trace.retained = current;

  result.final_sweep = hyper_sweep(working, val, fspec, vspec, grid, opts.jobs);
  result.model = result.final_sweep.best;
  return result;
}

}  // namespace fairsan
