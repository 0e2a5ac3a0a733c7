// fairsan command-line front end: experiment runner, grid sweeps, spectral
// separation certification, trace inspection, and dataset export.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fairsan/harness.hpp"

namespace {

using fairsan::ExperimentConfig;
using fairsan::json;

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> presets;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<int> jobs;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Experiment config JSON file");
  cmd->add_option("--preset", flags.presets,
                  "Named profile applied over the config (repeatable, in order)");
  cmd->add_option("--set", flags.overrides,
                  "Dotted-path override, e.g. attack.epsilon=0.15 (repeatable)");
  cmd->add_option("--seed", flags.seed, "Master seed override");
  cmd->add_option("--out", flags.out_dir, "Output directory override");
  cmd->add_option("--jobs", flags.jobs, "Worker thread count override");
}

ExperimentConfig resolve_config(const ConfigFlags& flags) {
  ExperimentConfig cfg;
  if (!flags.config_path.empty()) cfg = fairsan::load_config_file(flags.config_path);
  for (const std::string& preset : flags.presets) fairsan::apply_preset(cfg, preset);
  if (!flags.overrides.empty()) {
    json j = fairsan::to_json(cfg);
    for (const std::string& assignment : flags.overrides)
      fairsan::apply_override(j, assignment);
    cfg = fairsan::config_from_json(j);
  }
  if (flags.seed) cfg.seed = *flags.seed;
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (flags.jobs) cfg.jobs = *flags.jobs;
  return cfg;
}

int classify_failure(const std::exception& e) {
  if (dynamic_cast<const fairsan::StageError*>(&e))
    return static_cast<const fairsan::StageError&>(e).exit_code;
  if (dynamic_cast<const fairsan::ConfigError*>(&e)) return fairsan::kExitConfig;
  if (dynamic_cast<const fairsan::IoError*>(&e)) return fairsan::kExitIo;
  if (dynamic_cast<const fairsan::SchemaError*>(&e) ||
      dynamic_cast<const fairsan::RowError*>(&e))
    return fairsan::kExitIngest;
  if (dynamic_cast<const fairsan::AttackError*>(&e)) return fairsan::kExitAttack;
  if (dynamic_cast<const fairsan::DefenseError*>(&e)) return fairsan::kExitDefense;
  if (dynamic_cast<const fairsan::TrainingError*>(&e)) return fairsan::kExitTrain;
  return 1;
}

int cmd_run(const ConfigFlags& flags) {
  const ExperimentConfig cfg = resolve_config(flags);
  const fairsan::RunResult result = fairsan::run_experiment(cfg);
  std::cout << "run " << result.run_dir << "\n"
            << fairsan::format_report_text(result.report);
  return 0;
}

int cmd_grid(const ConfigFlags& flags, const fairsan::GridAxes& axes) {
  const ExperimentConfig cfg = resolve_config(flags);
  const fairsan::GridOutcome outcome = fairsan::run_grid(cfg, axes, cfg.jobs);
  std::cout << "grid " << outcome.grid_dir << "\n" << outcome.table_text;
  std::size_t failures = 0;
  for (const fairsan::GridCell& cell : outcome.cells) {
    if (!cell.ok) {
      ++failures;
      std::cerr << "cell failed: attack=" << cell.attack << " defense=" << cell.defense
                << " epsilon=" << cell.epsilon << ": " << cell.error << "\n";
    }
  }
  if (failures > 0) {
    std::cerr << failures << " of " << outcome.cells.size() << " cells failed\n";
    return fairsan::kExitEvaluate;
  }
  return 0;
}

struct CertifyFlags {
  double K = 10.0;
  double gamma_sq = 30.0;
  double sigma = 1.0;
  std::size_t dim = 10;
  std::size_t n = 20000;
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  std::string out_dir;
};

int cmd_certify(const CertifyFlags& flags) {
  fairsan::SyntheticSpec spec;
  spec.n = flags.n;
  spec.K = flags.K;
  spec.gamma = std::sqrt(flags.gamma_sq);
  spec.sigma = flags.sigma;
  spec.dim = flags.dim;
  spec.seed = flags.seed;
  const fairsan::CertificationRecord record =
      fairsan::theorem1_certify(spec, flags.trials);
  std::cout << fairsan::format_certification_text(record);
  std::string out_root = flags.out_dir;
  if (out_root.empty())
    if (const char* env = std::getenv(fairsan::kOutDirEnvVar); env && *env)
      out_root = env;
  if (!out_root.empty()) {
    std::filesystem::create_directories(out_root);
    const std::string path = out_root + "/certification.json";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw fairsan::IoError("cannot write " + path);
    out << fairsan::certification_to_json(record).dump(2) << "\n";
    std::cout << "record " << path << "\n";
  }
  if (record.condition_met && !record.certified) return 1;
  return 0;
}

int cmd_inspect_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fairsan::IoError("cannot open trace " + path);
  fairsan::SanitizationTrace trace;
  try {
    json j;
    in >> j;
    trace = fairsan::trace_from_json(j);
  } catch (const json::exception& e) {
    throw fairsan::SchemaError(path + ": " + e.what());
  }
  std::cout << fairsan::format_trace_text(trace);
  return 0;
}

struct ExportFlags {
  std::string out_file = "dataset.csv";
  std::size_t pca_points = 0;  // append this many projection columns
};

int cmd_export_dataset(const ConfigFlags& flags, const ExportFlags& exp) {
  const ExperimentConfig cfg = resolve_config(flags);
  fairsan::Dataset full = [&] {
    if (cfg.dataset.kind == "adult")
      return fairsan::load_tabular_full(cfg.dataset.path, fairsan::adult_spec());
    if (cfg.dataset.kind == "compas")
      return fairsan::load_tabular_full(cfg.dataset.path, fairsan::compas_spec());
    if (cfg.dataset.kind == "generic_csv")
      return fairsan::load_numeric_csv(cfg.dataset.path, cfg.dataset.label_column,
                                       cfg.dataset.group_column);
    if (cfg.dataset.kind == "synthetic") {
      fairsan::BiasedSyntheticSpec synth;
      synth.n = cfg.dataset.synth_n;
      synth.dim = cfg.dataset.synth_dim;
      synth.separation = cfg.dataset.synth_separation;
      synth.group_bias = cfg.dataset.synth_group_bias;
      synth.seed = fairsan::derive_seed(cfg.seed, 3);
      return fairsan::synth_biased(synth);
    }
    throw fairsan::ConfigError("unknown dataset.kind: " + cfg.dataset.kind);
  }();

  std::ofstream out(exp.out_file, std::ios::binary);
  if (!out) throw fairsan::IoError("cannot write " + exp.out_file);
  if (exp.pca_points == 0) {
    fairsan::write_dataset_csv(full, out);
  } else {
    fairsan::Matrix rows;
    rows.reserve(full.size());
    for (std::size_t i = 0; i < full.size(); ++i) rows.push_back(full.sample(i).x);
    const fairsan::PcaProjection pca = fairsan::pca_fit(rows, exp.pca_points);
    std::vector<std::string> header;
    for (std::size_t jx = 0; jx < full.dim(); ++jx)
      header.push_back("x" + std::to_string(jx));
    header.push_back("y");
    header.push_back("z");
    header.push_back("origin");
    for (std::size_t jp = 0; jp < exp.pca_points; ++jp)
      header.push_back("p" + std::to_string(jp));
    fairsan::write_csv_row(out, header);
    std::vector<std::string> fields;
    for (std::size_t i = 0; i < full.size(); ++i) {
      const fairsan::Sample& s = full.sample(i);
      fields.clear();
      for (double v : s.x) fields.push_back(fairsan::format_double(v));
      fields.push_back(std::to_string(s.y));
      fields.push_back(std::to_string(s.z));
      fields.push_back("0");
      const fairsan::Vec projected = fairsan::pca_apply_row(pca, s.x);
      for (double v : projected) fields.push_back(fairsan::format_double(v));
      fairsan::write_csv_row(out, fields);
    }
  }
  std::cout << "wrote " << exp.out_file << " (" << full.size() << " rows, dim "
            << full.dim() << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fairness-aware poisoning attacks, sanitization defenses, and "
               "experiment harness"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(fairsan::kVersion));

  ConfigFlags run_flags;
  CLI::App* run = app.add_subcommand("run", "Run one experiment end to end");
  add_config_flags(run, run_flags);

  ConfigFlags grid_flags;
  fairsan::GridAxes axes;
  CLI::App* grid = app.add_subcommand("grid", "Run an attack x defense x epsilon grid");
  add_config_flags(grid, grid_flags);
  grid->add_option("--attacks", axes.attacks,
                   "Attack axis entries: kind or kind:z=V (comma separated)")
      ->delimiter(',');
  grid->add_option("--defenses", axes.defenses, "Defense axis (comma separated)")
      ->delimiter(',');
  grid->add_option("--epsilons", axes.epsilons, "Poison budgets (comma separated)")
      ->delimiter(',');

  CertifyFlags certify_flags;
  CLI::App* certify = app.add_subcommand(
      "certify-theorem1", "Check the spectral separation bound on planted clouds");
  certify->add_option("--K", certify_flags.K, "Clean-to-bad ratio (> 1)");
  certify->add_option("--gamma-sq", certify_flags.gamma_sq,
                      "Squared center offset in sigma units");
  certify->add_option("--sigma", certify_flags.sigma, "Noise scale");
  certify->add_option("--dim", certify_flags.dim, "Feature dimension");
  certify->add_option("--n", certify_flags.n, "Clean samples per trial");
  certify->add_option("--trials", certify_flags.trials, "Number of trials");
  certify->add_option("--seed", certify_flags.seed, "Master seed");
  certify->add_option("--out", certify_flags.out_dir, "Directory for the JSON record");

  std::string trace_path;
  CLI::App* inspect = app.add_subcommand("inspect-trace",
                                         "Pretty-print a sanitization trace JSON");
  inspect->add_option("path", trace_path, "trace.json produced by a run")->required();

  ConfigFlags export_flags;
  ExportFlags export_opts;
  CLI::App* exporter = app.add_subcommand(
      "export-dataset", "Write the processed dataset (features, y, z, origin) as CSV");
  add_config_flags(exporter, export_flags);
  exporter->add_option("--file", export_opts.out_file, "Output CSV path");
  exporter->add_option("--pca", export_opts.pca_points,
                       "Append this many principal-component projection columns");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : fairsan::kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(run_flags);
    if (grid->parsed()) return cmd_grid(grid_flags, axes);
    if (certify->parsed()) return cmd_certify(certify_flags);
    if (inspect->parsed()) return cmd_inspect_trace(trace_path);
    if (exporter->parsed()) return cmd_export_dataset(export_flags, export_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return classify_failure(e);
  }
  return 0;
}
