// Acceptance gate: one check per release criterion, each reported on its own
// line as [PASS], [FAIL], or [SKIP]. The process exits with the number of
// failing criteria, so a zero exit means the gate is green.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fairsan/harness.hpp"
#include "support/oracles.hpp"

using namespace fairsan;
namespace fs = std::filesystem;

namespace {

struct CriterionResult {
  std::string name;
  std::string status;  // PASS | FAIL | SKIP
  std::string detail;
  double seconds = 0.0;
};

struct Check {
  bool ok = true;
  std::ostringstream why;
  void expect(bool condition, const std::string& message) {
    if (!condition) {
      if (!ok) why << "; ";
      ok = false;
      why << message;
    }
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

int hardware_jobs() {
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(8u, std::max(1u, hw)));
}

// ---------------------------------------------------------------------------
// 1. Spectral-separation certification on the planted-cloud synthetic family.
// ---------------------------------------------------------------------------

CriterionResult criterion_certification() {
  Check check;
  const struct {
    double K;
    double gamma_sq;
  } instances[] = {{2.0, 16.0}, {10.0, 30.0}};
  for (const auto& inst : instances) {
    SyntheticSpec spec;
    spec.n = 20000;
    spec.K = inst.K;
    spec.gamma = std::sqrt(inst.gamma_sq);
    spec.sigma = 1.0;
    spec.dim = 10;
    spec.seed = 20260823;
    const CertificationRecord rec = theorem1_certify(spec, 20);
    const std::string tag =
        "K=" + fmt(inst.K) + ",gamma^2=" + fmt(inst.gamma_sq);
    check.expect(rec.condition_met, tag + ": separation condition not met");
    check.expect(rec.certified, tag + ": only " + std::to_string(rec.passes) +
                                    "/20 trials met the bound");
  }
  return {"spectral-separation-certification", check.ok ? "PASS" : "FAIL",
          check.why.str()};
}

// ---------------------------------------------------------------------------
// 2. Fast-path implementations agree with independent brute-force oracles.
// ---------------------------------------------------------------------------

CriterionResult criterion_oracles() {
  Check check;
  std::mt19937_64 rng(0xACCE5511);
  std::normal_distribution<double> normal;

  // Power iteration vs a dense eigensolver on random matrices.
  std::uniform_int_distribution<std::size_t> pick_n(2, 50), pick_d(2, 20);
  double worst_cos = 1.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = pick_n(rng), d = pick_d(rng);
    Matrix m;
    for (std::size_t i = 0; i < n; ++i) {
      Vec row(d);
      for (double& v : row) v = normal(rng);
      m.push_back(std::move(row));
    }
    const Vec fast = top_right_singular_vector(m);
    const Vec slow = oracles::top_singular_vector_oracle(m);
    const double cos = std::fabs(dot(fast, slow)) / (norm(fast) * norm(slow));
    worst_cos = std::min(worst_cos, cos);
  }
  check.expect(worst_cos > 1.0 - 1e-6,
               "singular-vector cosine dropped to " + fmt(worst_cos));

  // Closed-form worst feasible sample vs a ten-thousand-point grid search.
  std::uniform_real_distribution<double> radius(0.5, 5.0);
  for (int rep = 0; rep < 50; ++rep) {
    Vec w = {normal(rng), normal(rng)};
    while (norm(w) < 0.3) w = {normal(rng), normal(rng)};
    const LinearModel model{w, normal(rng)};
    FeasibleSet f;
    f.mode = FeasibleSet::Mode::class_center;
    f.d = radius(rng);
    f.class_centers = {{0, {normal(rng), normal(rng)}},
                       {1, {normal(rng), normal(rng)}}};
    const Sample s = worst_feasible_sample(model, f, 0);
    const double yy = s.y == 1 ? 1.0 : -1.0;
    const double closed_loss = logistic_loss(yy * decision(model, s.x));
    const auto grid = oracles::worst_feasible_grid_oracle(
        model, {{0, f.class_centers.at(0)}, {1, f.class_centers.at(1)}}, f.d,
        100, 100);
    check.expect(closed_loss + 1e-6 >= grid.loss,
                 "grid search beat the closed form by " +
                     fmt(grid.loss - closed_loss));
    check.expect(distance(s.x, f.class_centers.at(s.y)) <= f.d + 1e-9,
                 "closed-form point left the feasible ball");
  }

  // Heap-free k-th-distance scores vs the all-pairs brute force.
  std::uniform_int_distribution<std::size_t> pick_rows(30, 120), pick_cols(2, 5);
  for (int rep = 0; rep < 20; ++rep) {
    const Dataset data =
        oracles::random_dataset(pick_rows(rng), pick_cols(rng), rng);
    const Vec fast = knn_scores(data, 5);
    const Vec slow = oracles::knn_scores_oracle(data, 5);
    for (std::size_t i = 0; i < fast.size(); ++i)
      check.expect(fast[i] == slow[i], "k-nn score mismatch at index " +
                                           std::to_string(i));
  }
  return {"oracle-equivalence", check.ok ? "PASS" : "FAIL", check.why.str()};
}

// ---------------------------------------------------------------------------
// 3. Online sanitization recovers a planted poison cloud on synthetic data.
// ---------------------------------------------------------------------------

CriterionResult criterion_planted_recovery() {
  Check check;
  const std::uint64_t master = 0x5EED0003;
  BiasedSyntheticSpec base;
  base.n = 1600;
  base.dim = 4;
  base.separation = 2.0;
  base.group_bias = 0.4;

  base.seed = derive_seed(master, 1);
  const Dataset train = synth_biased(base);
  base.seed = derive_seed(master, 2);
  base.n = 800;
  const Dataset val = synth_biased(base);
  base.seed = derive_seed(master, 3);
  base.n = 1000;
  const Dataset test = synth_biased(base);

  // Ten percent inserts into subgroup (1,1), eight noise deviations past the
  // subgroup mean on the wrong side of the class direction.
  const Vec mu_plus = subgroup_center(train, 1, 1);
  const Vec mu_minus = subgroup_center(train, 0, 1);
  Vec direction = mu_plus;
  for (std::size_t j = 0; j < direction.size(); ++j) direction[j] -= mu_minus[j];
  normalize(direction);
  std::mt19937_64 rng(derive_seed(master, 4));
  std::normal_distribution<double> normal;
  std::vector<Sample> poison;
  const std::size_t n_poison = poison_count(train.size(), 0.10);
  for (std::size_t i = 0; i < n_poison; ++i) {
    Sample s;
    s.y = 1;
    s.z = 1;
    s.x = mu_plus;
    for (std::size_t j = 0; j < s.x.size(); ++j)
      s.x[j] += -8.0 * direction[j] + 0.5 * normal(rng);
    poison.push_back(std::move(s));
  }
  const PoisonResult attacked = apply_poison(train, std::move(poison));
  const std::set<std::size_t> planted(attacked.poison_indices.begin(),
                                      attacked.poison_indices.end());

  FairnessSpec fspec;
  fspec.criterion = FairnessCriterion::equalized_tpr;
  fspec.tau = 0.05;
  ValScoreSpec vspec;
  TrainConfig tc;
  tc.epochs = 200;
  std::vector<TrainConfig> grid;
  for (double p : {0.0, 3.0}) {
    TrainConfig g = tc;
    g.fairness_penalty = p;
    g.l2_weight = 1e-3;
    grid.push_back(g);
  }
  RfcOptions opts;
  opts.jobs = hardware_jobs();
  const RfcResult rfc = rfc_defense(attacked.dataset, val, fspec, vspec, grid, opts);

  const RfcIteration* first_accepted = nullptr;
  for (const RfcIteration& it : rfc.trace.iterations)
    if (it.accepted) {
      first_accepted = &it;
      break;
    }
  check.expect(first_accepted != nullptr, "no removal pass was ever accepted");
  if (first_accepted) {
    std::size_t hits = 0;
    for (std::size_t i : first_accepted->removed)
      if (planted.count(i)) ++hits;
    const double precision =
        static_cast<double>(hits) /
        static_cast<double>(first_accepted->removed.size());
    check.expect(precision >= 0.7,
                 "first accepted pass precision " + fmt(precision) + " < 0.7");
  }

  const SweepResult clean = hyper_sweep(train, val, fspec, vspec, grid,
                                        hardware_jobs());
  const double clean_acc = accuracy(clean.best, test);
  const double defended_acc = accuracy(rfc.model, test);
  check.expect(std::fabs(defended_acc - clean_acc) <= 0.01,
               "sanitized accuracy " + fmt(defended_acc) +
                   " vs clean accuracy " + fmt(clean_acc));
  return {"planted-poison-recovery", check.ok ? "PASS" : "FAIL", check.why.str()};
}

// ---------------------------------------------------------------------------
// 4. Income-benchmark attack and recovery (needs the local Adult CSV).
// ---------------------------------------------------------------------------

std::string find_adult_csv() {
  if (const char* env = std::getenv("FAIRSAN_ADULT_CSV"))
    if (*env && fs::exists(env)) return env;
#ifdef FAIRSAN_SOURCE_DIR
  const std::string in_tree = std::string(FAIRSAN_SOURCE_DIR) + "/data/adult.csv";
  if (fs::exists(in_tree)) return in_tree;
#endif
  if (fs::exists("data/adult.csv")) return "data/adult.csv";
  return "";
}

CriterionResult criterion_adult() {
  const std::string csv = find_adult_csv();
  if (csv.empty())
    return {"adult-benchmark", "SKIP",
            "no Adult CSV found; set FAIRSAN_ADULT_CSV or place data/adult.csv"};

  Check check;
  oracles::TempDir tmp;
  ExperimentConfig base;
  apply_preset(base, "adult-tpr");
  base.dataset.path = csv;
  base.out_dir = tmp.str() + "/runs";
  base.jobs = hardware_jobs();
  base.seed = 1;

  ExperimentConfig clean_cfg = base;
  const RunResult clean = run_experiment(clean_cfg, false);
  check.expect(std::fabs(clean.report.accuracy - 0.817) <= 0.03,
               "clean accuracy " + fmt(clean.report.accuracy) +
                   " outside 0.817 +/- 0.03");
  check.expect(std::fabs(clean.report.fairness - 0.963) <= 0.03,
               "clean fairness " + fmt(clean.report.fairness) +
                   " outside 0.963 +/- 0.03");

  ExperimentConfig fatk_cfg = base;
  fatk_cfg.attack.kind = "f_attack";
  fatk_cfg.attack.epsilon = 0.10;
  fatk_cfg.attack.d = 9.0;
  fatk_cfg.attack.fixed_z = 1;
  const RunResult fatk = run_experiment(fatk_cfg, false);
  check.expect(fatk.report.fairness <= 0.87,
               "fairness attack left fairness at " + fmt(fatk.report.fairness));

  ExperimentConfig mm_cfg = fatk_cfg;
  mm_cfg.attack.kind = "min_max";
  const RunResult mm = run_experiment(mm_cfg, false);
  check.expect(mm.report.fairness > fatk.report.fairness,
               "plain min-max degraded fairness at least as much (" +
                   fmt(mm.report.fairness) + " <= " + fmt(fatk.report.fairness) +
                   ")");

  ExperimentConfig rfc_cfg = fatk_cfg;
  rfc_cfg.defense.kind = "rfc";
  const RunResult rfc = run_experiment(rfc_cfg, false);
  check.expect(rfc.report.accuracy >= 0.78,
               "sanitized accuracy " + fmt(rfc.report.accuracy) + " < 0.78");
  check.expect(rfc.report.fairness >= 0.92,
               "sanitized fairness " + fmt(rfc.report.fairness) + " < 0.92");
  return {"adult-benchmark", check.ok ? "PASS" : "FAIL", check.why.str()};
}

// ---------------------------------------------------------------------------
// 5. Bit-level determinism of the experiment pipeline.
// ---------------------------------------------------------------------------

CriterionResult criterion_determinism() {
  Check check;
  oracles::TempDir tmp;
  ExperimentConfig cfg;
  cfg.dataset.kind = "synthetic";
  cfg.dataset.synth_n = 800;
  cfg.dataset.synth_dim = 4;
  cfg.epochs = 150;
  cfg.grid_penalties = {0.0, 3.0};
  cfg.grid_l2 = {1e-3};
  cfg.seed = 17;
  cfg.attack.kind = "f_attack";
  cfg.attack.epsilon = 0.10;
  cfg.attack.d = 3.0;
  cfg.attack.fixed_z = 1;
  cfg.defense.kind = "knn";

  cfg.out_dir = tmp.str() + "/runs";
  const RunResult a = run_experiment(cfg, false);
  std::map<std::string, std::string> first_bytes;
  for (const char* artifact :
       {"manifest.json", "report.json", "model.txt", "poison.csv", "sweep.json"})
    first_bytes[artifact] = oracles::read_file(a.run_dir + "/" + artifact);
  // Identical config lands in the same run directory; the repeat must
  // reproduce every artifact byte for byte.
  const RunResult b = run_experiment(cfg, false);
  check.expect(a.run_dir == b.run_dir, "identical configs mapped to different run dirs");
  for (const auto& [artifact, left] : first_bytes) {
    const std::string right = oracles::read_file(b.run_dir + "/" + artifact);
    check.expect(!left.empty() && left == right,
                 artifact + " differs between identical runs");
  }
  check.expect(a.manifest["hashes"]["validation"] ==
                   a.manifest["hashes"]["validation_after"],
               "validation split hash changed during the run");
  check.expect(a.manifest["hashes"]["test"] == a.manifest["hashes"]["test_after"],
               "test split hash changed during the run");

  // The fairness attack with a zero penalty weight must be byte-for-byte the
  // plain min-max attack.
  ExperimentConfig fz = cfg;
  fz.defense.kind = "none";
  fz.attack.lambda = 0.0;
  fz.out_dir = tmp.str() + "/fz";
  ExperimentConfig mm = fz;
  mm.attack.kind = "min_max";
  mm.out_dir = tmp.str() + "/mm";
  const RunResult fz_run = run_experiment(fz, false);
  const RunResult mm_run = run_experiment(mm, false);
  check.expect(oracles::read_file(fz_run.run_dir + "/poison.csv") ==
                   oracles::read_file(mm_run.run_dir + "/poison.csv"),
               "zero-penalty fairness attack and min-max wrote different poison");
  check.expect(oracles::read_file(fz_run.run_dir + "/model.txt") ==
                   oracles::read_file(mm_run.run_dir + "/model.txt"),
               "zero-penalty fairness attack and min-max trained different models");
  return {"determinism", check.ok ? "PASS" : "FAIL", check.why.str()};
}

// ---------------------------------------------------------------------------
// 6. Analytic training gradient vs central differences.
// ---------------------------------------------------------------------------

CriterionResult criterion_gradient() {
  Check check;
  std::mt19937_64 rng(0x6EAD);
  const Dataset data = oracles::random_dataset(50, 2, rng);
  FairnessSpec fspec;
  fspec.criterion = FairnessCriterion::equalized_tpr;
  fspec.tau = 0.02;
  TrainConfig cfg;
  cfg.fairness_penalty = 3.0;
  cfg.l2_weight = 1e-3;
  const GroupSupport sup = fairness_support(data, fspec);
  std::normal_distribution<double> normal;
  for (int rep = 0; rep < 20; ++rep) {
    const LinearModel at{{normal(rng), normal(rng)}, normal(rng)};
    const Objective obj = training_objective(at, data, fspec, cfg, &sup);
    const Vec fd = oracles::central_difference(
        [&](const LinearModel& m) {
          return training_objective(m, data, fspec, cfg, &sup).value;
        },
        at);
    Vec analytic = obj.grad_w;
    analytic.push_back(obj.grad_b);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      num += (analytic[i] - fd[i]) * (analytic[i] - fd[i]);
      den += fd[i] * fd[i];
    }
    check.expect(std::sqrt(num) <= 1e-5 * std::max(1.0, std::sqrt(den)),
                 "gradient mismatch " + fmt(std::sqrt(num)) + " at point " +
                     std::to_string(rep));
  }
  return {"gradient-check", check.ok ? "PASS" : "FAIL", check.why.str()};
}

}  // namespace

int main() {
  struct Entry {
    std::string name;
    std::function<CriterionResult()> run;
    double budget_seconds;
  };
  const std::vector<Entry> entries = {
      {"spectral-separation-certification", criterion_certification, 60.0},
      {"oracle-equivalence", criterion_oracles, 120.0},
      {"planted-poison-recovery", criterion_planted_recovery, 120.0},
      {"adult-benchmark", criterion_adult, 1200.0},
      {"determinism", criterion_determinism, 300.0},
      {"gradient-check", criterion_gradient, 10.0},
  };

  int failures = 0;
  std::printf("acceptance gate: %zu criteria\n", entries.size());
  for (const Entry& entry : entries) {
    const auto start = std::chrono::steady_clock::now();
    CriterionResult result;
    try {
      result = entry.run();
    } catch (const std::exception& e) {
      result.status = "FAIL";
      result.detail = std::string("exception: ") + e.what();
    }
    result.name = entry.name;
    result.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (result.status == "PASS" && result.seconds > entry.budget_seconds) {
      result.status = "FAIL";
      result.detail = "exceeded the " + fmt(entry.budget_seconds) +
                      "s budget";
    }
    if (result.status == "FAIL") ++failures;
    std::printf("[%s] %s (%.1fs)%s%s\n", result.status.c_str(),
                result.name.c_str(), result.seconds,
                result.detail.empty() ? "" : ": ", result.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, entries.size());
  return failures;
}
