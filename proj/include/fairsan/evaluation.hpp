#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fairsan/classifier.hpp"
#include "fairsan/dataset.hpp"
#include "fairsan/defenses.hpp"
#include "fairsan/error.hpp"
#include "fairsan/ingestion.hpp"
#include "fairsan/numerics.hpp"
#include "fairsan/rng.hpp"

namespace fairsan {

// ---------------------------------------------------------------------------
// Fairness score conventions
// ---------------------------------------------------------------------------

/// How a scalar fairness score is reported: pairwise (two groups, one minus
/// the absolute rate gap) or max-deviation from the pooled rate; each over
/// true-positive rates or positive-prediction rates.
enum class FairnessConvention { pairwise_tpr, max_dev_tpr, pairwise_pr, max_dev_pr };

inline std::string to_string(FairnessConvention c) {
  switch (c) {
    case FairnessConvention::pairwise_tpr: return "pairwise_tpr";
    case FairnessConvention::max_dev_tpr: return "max_dev_tpr";
    case FairnessConvention::pairwise_pr: return "pairwise_pr";
    default: return "max_dev_pr";
  }
}

inline FairnessConvention fairness_convention_from_string(const std::string& s) {
  if (s == "pairwise_tpr") return FairnessConvention::pairwise_tpr;
  if (s == "max_dev_tpr") return FairnessConvention::max_dev_tpr;
  if (s == "pairwise_pr") return FairnessConvention::pairwise_pr;
  if (s == "max_dev_pr") return FairnessConvention::max_dev_pr;
  throw ConfigError("unknown fairness convention: " + s);
}

inline double fairness_score(const LinearModel& model, const Dataset& test,
                             FairnessConvention convention) {
  const bool tpr = convention == FairnessConvention::pairwise_tpr ||
                   convention == FairnessConvention::max_dev_tpr;
  const bool pairwise = convention == FairnessConvention::pairwise_tpr ||
                        convention == FairnessConvention::pairwise_pr;
  FairnessSpec spec;
  spec.criterion =
      tpr ? FairnessCriterion::equalized_tpr : FairnessCriterion::equalized_treatment;
  const GroupSupport sup = fairness_support(test, spec);
  const GroupRates rates = group_rates(model, test, sup);
  if (pairwise) {
    if (rates.per_group.size() != 2)
      throw ConfigError("pairwise fairness convention requires exactly 2 groups, got " +
                        std::to_string(rates.per_group.size()));
    return 1.0 - std::abs(rates.per_group[0] - rates.per_group[1]);
  }
  double max_dev = 0.0;
  for (double r : rates.per_group)
    max_dev = std::max(max_dev, std::abs(r - rates.overall));
  return 1.0 - max_dev;
}

// ---------------------------------------------------------------------------
// Detection quality
// ---------------------------------------------------------------------------

/// Removal-vs-plant bookkeeping. Precision is null when nothing was removed;
/// recall is null when nothing was planted.
struct DetectionQuality {
  std::optional<double> precision;
  std::optional<double> recall;
  std::size_t true_positives = 0;
  std::size_t removed_count = 0;
  std::size_t poison_count = 0;
};

inline DetectionQuality detection_quality(std::vector<std::size_t> removed,
                                          std::vector<std::size_t> poisoned) {
  std::sort(removed.begin(), removed.end());
  std::sort(poisoned.begin(), poisoned.end());
  DetectionQuality q;
  q.removed_count = removed.size();
  q.poison_count = poisoned.size();
  std::vector<std::size_t> hit;
  std::set_intersection(removed.begin(), removed.end(), poisoned.begin(), poisoned.end(),
                        std::back_inserter(hit));
  q.true_positives = hit.size();
  if (!removed.empty())
    q.precision = static_cast<double>(q.true_positives) / static_cast<double>(removed.size());
  if (!poisoned.empty())
    q.recall = static_cast<double>(q.true_positives) / static_cast<double>(poisoned.size());
  return q;
}

// ---------------------------------------------------------------------------
// Spectral-separation certification
// ---------------------------------------------------------------------------

/// Closed-form separation bound: ((K-1)/(K+1) * gamma^2 - (K+1)) * sigma^2.
inline double spectral_separation_bound(double K, double gamma, double sigma) {
  return ((K - 1.0) / (K + 1.0) * gamma * gamma - (K + 1.0)) * sigma * sigma;
}

/// The bound is positive (and asserted) only when gamma^2 exceeds this.
inline double spectral_condition_threshold(double K) {
  return (K + 1.0) * (K + 1.0) / (K - 1.0);
}

struct CertificationTrial {
  std::uint64_t seed = 0;
  double mean_sq_bad = 0.0;
  double mean_sq_clean = 0.0;
  double difference = 0.0;
  double slack = 0.0;  // 5 standard errors of the difference
  bool pass = false;   // difference >= bound - slack
};

struct CertificationRecord {
  SyntheticSpec spec;
  std::size_t trials = 0;
  double bound = 0.0;
  bool condition_met = false;  // gamma^2 strictly above the threshold
  std::vector<CertificationTrial> trial_records;
  std::size_t passes = 0;
  bool certified = false;  // >= 95% of trials pass
};

/// Repeats the planted-cloud experiment over seeded trials and checks the
/// empirical mean-squared alignment-score difference (bad minus clean)
/// against the closed-form bound, with a five-standard-error allowance.
inline CertificationRecord theorem1_certify(const SyntheticSpec& spec,
                                            std::size_t trials = 20) {
  if (trials == 0) throw ConfigError("theorem1_certify: need at least 1 trial");
  validate(spec);
  CertificationRecord record;
  record.spec = spec;
  record.trials = trials;
  record.bound = spectral_separation_bound(spec.K, spec.gamma, spec.sigma);
  record.condition_met =
      spec.gamma * spec.gamma > spectral_condition_threshold(spec.K);

  for (std::size_t t = 0; t < trials; ++t) {
    SyntheticSpec trial_spec = spec;
    trial_spec.seed = derive_seed(spec.seed, 0x43455254 + t);  // "CERT" + trial
    const SyntheticData data = synth_theorem1(trial_spec);

    const std::vector<SubgroupView> views = subgroup_partition(data.dataset);
    const CenteredMatrix centered = center_matrix(data.dataset, views.front());
    const Vec q = alignment_scores(centered);

    std::vector<char> is_bad(data.dataset.size(), 0);
    for (std::size_t i : data.bad_indices) is_bad[i] = 1;
    // Welford accumulation of mean and variance of q^2 per population.
    double mean[2] = {0.0, 0.0}, m2[2] = {0.0, 0.0};
    std::size_t count[2] = {0, 0};
    for (std::size_t i = 0; i < q.size(); ++i) {
      const int side = is_bad[centered.source_indices[i]] ? 1 : 0;
      const double value = q[i] * q[i];
      ++count[side];
      const double delta = value - mean[side];
      mean[side] += delta / static_cast<double>(count[side]);
      m2[side] += delta * (value - mean[side]);
    }
    CertificationTrial trial;
    trial.seed = trial_spec.seed;
    trial.mean_sq_bad = mean[1];
    trial.mean_sq_clean = mean[0];
    trial.difference = mean[1] - mean[0];
    const double var_bad = count[1] > 1 ? m2[1] / static_cast<double>(count[1] - 1) : 0.0;
    const double var_clean =
        count[0] > 1 ? m2[0] / static_cast<double>(count[0] - 1) : 0.0;
    trial.slack = 5.0 * std::sqrt(var_bad / static_cast<double>(count[1]) +
                                  var_clean / static_cast<double>(count[0]));
    trial.pass = trial.difference >= record.bound - trial.slack;
    if (trial.pass) ++record.passes;
    record.trial_records.push_back(trial);
  }
  record.certified = static_cast<double>(record.passes) >=
                     0.95 * static_cast<double>(trials) - 1e-12;
  return record;
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

struct EvalReport {
  double accuracy = 0.0;
  double fairness = 0.0;
  std::string convention;
  std::vector<int> groups;
  Vec group_tpr;
  Vec group_pr;
  double overall_tpr = 0.0;
  double overall_pr = 0.0;
  std::optional<double> detection_precision;
  std::optional<double> detection_recall;
  std::string config_fingerprint;
  std::uint64_t seed = 0;
};

inline EvalReport build_report(const LinearModel& model, const Dataset& test,
                               FairnessConvention convention,
                               const DetectionQuality* detection = nullptr,
                               const std::string& config_fingerprint = "",
                               std::uint64_t seed = 0) {
  EvalReport report;
  report.accuracy = accuracy(model, test);
  report.fairness = fairness_score(model, test, convention);
  report.convention = to_string(convention);
  report.groups = test.groups();

  FairnessSpec tpr_spec;
  tpr_spec.criterion = FairnessCriterion::equalized_tpr;
  const GroupSupport tpr_sup = fairness_support(test, tpr_spec);
  const GroupRates tpr_rates = group_rates(model, test, tpr_sup);
  report.group_tpr = tpr_rates.per_group;
  report.overall_tpr = tpr_rates.overall;

  FairnessSpec pr_spec;
  pr_spec.criterion = FairnessCriterion::equalized_treatment;
  const GroupSupport pr_sup = fairness_support(test, pr_spec);
  const GroupRates pr_rates = group_rates(model, test, pr_sup);
  report.group_pr = pr_rates.per_group;
  report.overall_pr = pr_rates.overall;

  if (detection) {
    report.detection_precision = detection->precision;
    report.detection_recall = detection->recall;
  }
  report.config_fingerprint = config_fingerprint;
  report.seed = seed;
  return report;
}

}  // namespace fairsan
