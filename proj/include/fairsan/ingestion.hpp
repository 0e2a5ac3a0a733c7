#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "fairsan/csv.hpp"
#include "fairsan/dataset.hpp"
#include "fairsan/error.hpp"
#include "fairsan/numerics.hpp"
#include "fairsan/rng.hpp"
#include "fairsan/vecmath.hpp"

namespace fairsan {

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

/// Extra numeric features computed from raw columns before encoding.
struct DerivedColumn {
  enum class Kind { date_diff_days, ordinal };
  std::string name;
  Kind kind = Kind::ordinal;
  std::string column_a;  // date_diff: minuend; ordinal: source column
  std::string column_b;  // date_diff: subtrahend
  std::map<std::string, double> ordinal_map;
};

struct LabelRule {
  std::string column;
  std::map<std::string, int> mapping;
  bool strip_trailing_dot = false;  // UCI test files append '.' to labels
};

struct SensitiveRule {
  std::string column;
  std::map<std::string, int> mapping;
  bool drop_unmapped = false;  // true: skip rows outside the mapping (counted)
};

struct PreprocessSpec {
  std::vector<std::string> numeric_columns;
  std::vector<std::string> categorical_columns;
  std::vector<DerivedColumn> derived_columns;
  std::size_t pca_components = 0;  // applied to the dummy block only
  LabelRule label;
  SensitiveRule sensitive;
  /// Column names assumed when the file has no header row (empty: header
  /// required).
  std::vector<std::string> headerless_names;
};

struct SplitSpec {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
  std::uint64_t seed = 0;
  bool stratified = true;
};

inline void validate(const SplitSpec& spec) {
  if (!(spec.train > 0.0 && spec.validation > 0.0 && spec.test > 0.0))
    throw ConfigError("split fractions must be positive");
  if (std::abs(spec.train + spec.validation + spec.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
}

/// Gaussian clean cloud plus a displaced bad cloud, sized n and round(n/K).
struct SyntheticSpec {
  std::size_t n = 20000;
  double K = 10.0;       // clean-to-bad ratio, > 1
  double gamma = 5.0;    // bad-center offset in sigma units
  double sigma = 1.0;
  std::size_t dim = 10;
  std::uint64_t seed = 0;
};

inline std::size_t bad_count(const SyntheticSpec& spec) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(spec.n) / spec.K));
}

inline void validate(const SyntheticSpec& spec) {
  if (!(spec.K > 1.0)) throw ConfigError("synthetic spec: K must be > 1");
  if (!(spec.sigma > 0.0)) throw ConfigError("synthetic spec: sigma must be > 0");
  if (spec.dim == 0) throw ConfigError("synthetic spec: dim must be >= 1");
  if (spec.n == 0 || bad_count(spec) == 0)
    throw ConfigError("synthetic spec: n/K must round to at least 1 bad sample");
  if (spec.gamma < 0.0) throw ConfigError("synthetic spec: gamma must be >= 0");
}

/// Two-group Gaussian classification data with a built-in TPR disparity:
/// positives of the disadvantaged group sit closer to the class boundary.
struct BiasedSyntheticSpec {
  std::size_t n = 2000;
  std::size_t dim = 5;
  double separation = 2.0;  // class-mean offset along the first axis
  double group_bias = 0.4;  // fraction of the offset given to group 0 positives
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Dates
// ---------------------------------------------------------------------------

/// Days between the date parts of two "YYYY-MM-DD[ HH:MM:SS]" stamps (a - b).
/// Negative when a precedes b.
inline double date_diff_days(const std::string& a, const std::string& b) {
  auto to_days = [](const std::string& stamp) {
    int y = 0;
    unsigned m = 0, d = 0;
    if (std::sscanf(stamp.c_str(), "%d-%u-%u", &y, &m, &d) != 3)
      throw std::invalid_argument("unparseable date: '" + stamp + "'");
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                          std::chrono::day{d}};
    if (!ymd.ok()) throw std::invalid_argument("invalid date: '" + stamp + "'");
    return std::chrono::sys_days(ymd).time_since_epoch().count();
  };
  return static_cast<double>(to_days(a) - to_days(b));
}

// ---------------------------------------------------------------------------
// Raw-row parsing (shared by the Adult and COMPAS pipelines)
// ---------------------------------------------------------------------------

struct IngestReport {
  std::size_t rows_total = 0;
  std::size_t rows_dropped_missing = 0;
  std::size_t rows_dropped_unmapped_group = 0;
  std::size_t rows_used = 0;
};

/// Parsed rows before any fitted transform: numeric features (declared plus
/// derived, in spec order), raw categorical strings, labels and groups.
struct ParsedRows {
  Matrix numeric;
  std::vector<std::vector<std::string>> categorical;
  std::vector<int> y;
  std::vector<int> z;
  IngestReport report;
};

namespace detail {

inline bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "?";
}

inline CsvTable read_table_with_fallback(const std::string& path,
                                         const PreprocessSpec& spec) {
  CsvTable table = read_csv_file(path, /*has_header=*/true);
  if (table.header.empty() && table.rows.empty())
    throw EmptyInputError("empty input file: " + path);
  const bool header_ok = spec.numeric_columns.empty() ||
                         table.has_column(spec.numeric_columns.front());
  if (!header_ok && !spec.headerless_names.empty()) {
    // Headerless distribution of the file: the first line is data.
    CsvTable raw = read_csv_file(path, /*has_header=*/false);
    raw.header = spec.headerless_names;
    return raw;
  }
  return table;
}

}  // namespace detail

inline ParsedRows parse_rows(const CsvTable& table, const PreprocessSpec& spec) {
  ParsedRows out;
  out.report.rows_total = table.rows.size();

  std::vector<std::size_t> numeric_idx, categorical_idx;
  for (const std::string& name : spec.numeric_columns)
    numeric_idx.push_back(table.column(name));
  for (const std::string& name : spec.categorical_columns)
    categorical_idx.push_back(table.column(name));
  struct DerivedIdx {
    const DerivedColumn* def;
    std::size_t a = 0, b = 0;
  };
  std::vector<DerivedIdx> derived_idx;
  for (const DerivedColumn& d : spec.derived_columns) {
    DerivedIdx di{&d};
    di.a = table.column(d.column_a);
    if (d.kind == DerivedColumn::Kind::date_diff_days) di.b = table.column(d.column_b);
    derived_idx.push_back(di);
  }
  const std::size_t label_idx = table.column(spec.label.column);
  const std::size_t sensitive_idx = table.column(spec.sensitive.column);

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::vector<std::string>& row = table.rows[r];
    const std::size_t row_no = r + 1;
    auto cell = [&](std::size_t col) -> std::string {
      if (col >= row.size())
        throw RowError("row " + std::to_string(row_no) + ": too few fields", row_no);
      return trim(row[col]);
    };

    bool missing = false;
    for (std::size_t c : numeric_idx)
      if (detail::is_missing(cell(c))) missing = true;
    for (std::size_t c : categorical_idx)
      if (detail::is_missing(cell(c))) missing = true;
    for (const DerivedIdx& di : derived_idx) {
      if (detail::is_missing(cell(di.a))) missing = true;
      if (di.def->kind == DerivedColumn::Kind::date_diff_days &&
          detail::is_missing(cell(di.b)))
        missing = true;
    }
    if (detail::is_missing(cell(label_idx)) || detail::is_missing(cell(sensitive_idx)))
      missing = true;
    if (missing) {
      ++out.report.rows_dropped_missing;
      continue;
    }

    const std::string z_raw = cell(sensitive_idx);
    auto z_it = spec.sensitive.mapping.find(z_raw);
    if (z_it == spec.sensitive.mapping.end()) {
      if (spec.sensitive.drop_unmapped) {
        ++out.report.rows_dropped_unmapped_group;
        continue;
      }
      throw RowError("row " + std::to_string(row_no) + ": unmapped group value '" +
                         z_raw + "'",
                     row_no);
    }

    std::string label_raw = cell(label_idx);
    if (spec.label.strip_trailing_dot && !label_raw.empty() && label_raw.back() == '.')
      label_raw.pop_back();
    auto y_it = spec.label.mapping.find(label_raw);
    if (y_it == spec.label.mapping.end())
      throw RowError("row " + std::to_string(row_no) + ": unmapped label value '" +
                         label_raw + "'",
                     row_no);

    Vec features;
    features.reserve(numeric_idx.size() + derived_idx.size());
    for (std::size_t c : numeric_idx) features.push_back(parse_double(cell(c), row_no));
    for (const DerivedIdx& di : derived_idx) {
      if (di.def->kind == DerivedColumn::Kind::date_diff_days) {
        try {
          features.push_back(date_diff_days(cell(di.a), cell(di.b)));
        } catch (const std::invalid_argument& e) {
          throw RowError("row " + std::to_string(row_no) + ": " + e.what(), row_no);
        }
      } else {
        const std::string v = cell(di.a);
        auto it = di.def->ordinal_map.find(v);
        if (it == di.def->ordinal_map.end())
          throw RowError("row " + std::to_string(row_no) + ": unmapped ordinal value '" +
                             v + "' for " + di.def->name,
                         row_no);
        features.push_back(it->second);
      }
    }

    std::vector<std::string> cats;
    cats.reserve(categorical_idx.size());
    for (std::size_t c : categorical_idx) cats.push_back(cell(c));

    out.numeric.push_back(std::move(features));
    out.categorical.push_back(std::move(cats));
    out.y.push_back(y_it->second);
    out.z.push_back(z_it->second);
  }
  out.report.rows_used = out.y.size();
  return out;
}

// ---------------------------------------------------------------------------
// Fitted feature transforms (dummy vocabulary -> PCA -> standardization)
// ---------------------------------------------------------------------------

/// Per-column category vocabularies fit on training rows; categories map to
/// one-hot blocks, unseen values to all-zero blocks.
struct DummyVocab {
  std::vector<std::vector<std::string>> categories;  // sorted per column
  std::size_t width = 0;
};

inline DummyVocab dummy_fit(const std::vector<std::vector<std::string>>& rows,
                            const std::vector<std::size_t>& fit_indices,
                            std::size_t n_columns) {
  DummyVocab vocab;
  vocab.categories.assign(n_columns, {});
  for (std::size_t c = 0; c < n_columns; ++c) {
    std::vector<std::string>& cats = vocab.categories[c];
    for (std::size_t i : fit_indices) cats.push_back(rows[i][c]);
    std::sort(cats.begin(), cats.end());
    cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
    vocab.width += cats.size();
  }
  return vocab;
}

inline Vec dummy_encode(const DummyVocab& vocab, const std::vector<std::string>& cats) {
  Vec row(vocab.width, 0.0);
  std::size_t offset = 0;
  for (std::size_t c = 0; c < vocab.categories.size(); ++c) {
    const std::vector<std::string>& known = vocab.categories[c];
    auto it = std::lower_bound(known.begin(), known.end(), cats[c]);
    if (it != known.end() && *it == cats[c])
      row[offset + static_cast<std::size_t>(it - known.begin())] = 1.0;
    offset += known.size();
  }
  return row;
}

/// Everything fit on the training rows and applied to every split.
struct FeaturePipeline {
  DummyVocab vocab;
  PcaProjection pca;     // over the dummy block; empty when no categoricals
  Standardizer standardizer;  // over the final feature vector
  std::size_t n_numeric = 0;
  bool use_pca = false;
};

namespace detail {

inline Vec assemble_features(const FeaturePipeline& pipe, const Vec& numeric,
                             const std::vector<std::string>& cats) {
  Vec features = numeric;
  if (!pipe.vocab.categories.empty()) {
    const Vec dummies = dummy_encode(pipe.vocab, cats);
    if (pipe.use_pca) {
      const Vec projected = pca_apply_row(pipe.pca, dummies);
      features.insert(features.end(), projected.begin(), projected.end());
    } else {
      features.insert(features.end(), dummies.begin(), dummies.end());
    }
  }
  return features;
}

}  // namespace detail

inline FeaturePipeline fit_feature_pipeline(const ParsedRows& rows,
                                            const std::vector<std::size_t>& train_indices,
                                            std::size_t pca_components) {
  if (train_indices.empty())
    throw EmptyInputError("fit_feature_pipeline: no training rows");
  FeaturePipeline pipe;
  pipe.n_numeric = rows.numeric.empty() ? 0 : rows.numeric.front().size();
  const std::size_t n_cat_columns =
      rows.categorical.empty() ? 0 : rows.categorical.front().size();
  if (n_cat_columns > 0) {
    pipe.vocab = dummy_fit(rows.categorical, train_indices, n_cat_columns);
    if (pca_components > 0) {
      if (pca_components > pipe.vocab.width)
        throw ConfigError("pca_components " + std::to_string(pca_components) +
                          " exceeds dummy width " + std::to_string(pipe.vocab.width));
      Matrix dummy_rows;
      dummy_rows.reserve(train_indices.size());
      for (std::size_t i : train_indices)
        dummy_rows.push_back(dummy_encode(pipe.vocab, rows.categorical[i]));
      pipe.pca = pca_fit(dummy_rows, pca_components);
      pipe.use_pca = true;
    }
  } else if (pca_components > 0) {
    throw ConfigError("pca_components > 0 but no categorical columns");
  }

  Matrix train_features;
  train_features.reserve(train_indices.size());
  for (std::size_t i : train_indices)
    train_features.push_back(
        detail::assemble_features(pipe, rows.numeric[i], rows.categorical.empty()
                                                             ? std::vector<std::string>{}
                                                             : rows.categorical[i]));
  pipe.standardizer = standardize_fit(train_features);
  return pipe;
}

inline Dataset apply_feature_pipeline(const FeaturePipeline& pipe, const ParsedRows& rows,
                                      const std::vector<std::size_t>& indices) {
  std::vector<Sample> samples;
  samples.reserve(indices.size());
  Matrix features;
  features.reserve(indices.size());
  for (std::size_t i : indices)
    features.push_back(
        detail::assemble_features(pipe, rows.numeric[i], rows.categorical.empty()
                                                             ? std::vector<std::string>{}
                                                             : rows.categorical[i]));
  standardize_apply(pipe.standardizer, features);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    Sample s;
    s.x = std::move(features[k]);
    s.y = rows.y[indices[k]];
    s.z = rows.z[indices[k]];
    samples.push_back(std::move(s));
  }
  std::size_t dim = pipe.n_numeric;
  if (!pipe.vocab.categories.empty())
    dim += pipe.use_pca ? pipe.pca.directions.size() : pipe.vocab.width;
  return Dataset::infer(std::move(samples), dim);
}

// ---------------------------------------------------------------------------
// Splitting and balancing
// ---------------------------------------------------------------------------

/// Largest-remainder allocation of `count` slots to the three splits; leftover
/// slots go to train, then validation, then test.
namespace detail {

inline std::array<std::size_t, 3> allocate_split(std::size_t count,
                                                 const SplitSpec& spec) {
  const double fracs[3] = {spec.train, spec.validation, spec.test};
  std::array<std::size_t, 3> base{};
  double remainders[3];
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double target = fracs[k] * static_cast<double>(count);
    base[k] = static_cast<std::size_t>(std::floor(target + 1e-12));
    remainders[k] = target - static_cast<double>(base[k]);
    assigned += base[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainders[a] > remainders[b]; });
  const std::size_t leftover = count - assigned;
  for (std::size_t k = 0; k < leftover; ++k) ++base[order[k]];
  return base;
}

}  // namespace detail

/// Disjoint cover of 0..n-1 into train/validation/test index lists, each
/// sorted ascending. Stratified by (y, z) when requested; membership is
/// seeded, deterministic, and proportional per stratum.
inline std::array<std::vector<std::size_t>, 3> split_indices(
    const std::vector<int>& y, const std::vector<int>& z, const SplitSpec& spec) {
  validate(spec);
  if (y.size() != z.size()) throw DimensionError("split_indices: y/z size mismatch");
  const std::size_t n = y.size();
  if (n == 0) throw EmptyInputError("split_indices: no samples");

  std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
  if (spec.stratified) {
    for (std::size_t i = 0; i < n; ++i) strata[{y[i], z[i]}].push_back(i);
  } else {
    std::vector<std::size_t>& all = strata[{0, 0}];
    all.resize(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
  }

  Rng rng = make_rng(derive_seed(spec.seed, 0x53504c49));  // "SPLI"
  std::array<std::vector<std::size_t>, 3> out;
  for (auto& [key, members] : strata) {
    for (std::size_t i = members.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(members[i - 1], members[pick(rng)]);
    }
    const std::array<std::size_t, 3> counts = detail::allocate_split(members.size(), spec);
    std::size_t cursor = 0;
    for (int k = 0; k < 3; ++k) {
      for (std::size_t c = 0; c < counts[k]; ++c) out[k].push_back(members[cursor++]);
    }
  }
  for (auto& part : out) std::sort(part.begin(), part.end());
  for (int k = 0; k < 3; ++k) {
    if (out[k].empty()) {
      static const char* names[3] = {"train", "validation", "test"};
      throw ConfigError(std::string("split produced an empty ") + names[k] + " set");
    }
  }
  return out;
}

struct SplitResult {
  Dataset train;
  Dataset validation;
  Dataset test;
  std::array<std::vector<std::size_t>, 3> indices;
};

inline SplitResult split(const Dataset& dataset, const SplitSpec& spec) {
  std::vector<int> y(dataset.size()), z(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    y[i] = dataset.sample(i).y;
    z[i] = dataset.sample(i).z;
  }
  SplitResult result;
  result.indices = split_indices(y, z, spec);
  result.train = dataset.subset(result.indices[0]);
  result.validation = dataset.subset(result.indices[1]);
  result.test = dataset.subset(result.indices[2]);
  return result;
}

/// Ascending indices of a class-balanced subsample: every class downsampled
/// to the minority-class count by seeded selection.
inline std::vector<std::size_t> balance_indices(const std::vector<int>& y,
                                                std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);
  if (by_class.size() < 2)
    throw InsufficientClassError("balance: need at least two classes");
  std::size_t minority = y.size();
  for (const auto& [label, members] : by_class)
    minority = std::min(minority, members.size());

  Rng rng = make_rng(derive_seed(seed, 0x42414c41));  // "BALA"
  std::vector<std::size_t> kept;
  for (auto& [label, members] : by_class) {
    if (members.size() == minority) {
      kept.insert(kept.end(), members.begin(), members.end());
    } else {
      const std::vector<std::size_t> picks =
          sample_indices(members.size(), minority, rng);
      for (std::size_t p : picks) kept.push_back(members[p]);
    }
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

inline Dataset balance_classes(const Dataset& dataset, std::uint64_t seed) {
  std::vector<int> y(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) y[i] = dataset.sample(i).y;
  return dataset.subset(balance_indices(y, seed));
}

// ---------------------------------------------------------------------------
// End-to-end tabular pipelines
// ---------------------------------------------------------------------------

struct DataBundle {
  Dataset train;
  Dataset validation;
  Dataset test;
  IngestReport report;
};

/// Shared leak-free pipeline: parse -> (balance) -> split on raw rows ->
/// fit transforms on the training rows only -> encode every split.
inline DataBundle load_tabular(const std::string& path, const PreprocessSpec& spec,
                               const SplitSpec& split_spec, bool balance = false,
                               std::uint64_t balance_seed = 0) {
  const CsvTable table = detail::read_table_with_fallback(path, spec);
  ParsedRows rows = parse_rows(table, spec);
  if (rows.y.empty()) throw EmptyInputError(path + ": no usable rows");

  std::vector<std::size_t> keep(rows.y.size());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
  if (balance) {
    keep = balance_indices(rows.y, balance_seed);
  }
  std::vector<int> y_kept, z_kept;
  y_kept.reserve(keep.size());
  z_kept.reserve(keep.size());
  for (std::size_t i : keep) {
    y_kept.push_back(rows.y[i]);
    z_kept.push_back(rows.z[i]);
  }

  const std::array<std::vector<std::size_t>, 3> parts =
      split_indices(y_kept, z_kept, split_spec);
  std::array<std::vector<std::size_t>, 3> raw_parts;
  for (int k = 0; k < 3; ++k) {
    raw_parts[k].reserve(parts[k].size());
    for (std::size_t i : parts[k]) raw_parts[k].push_back(keep[i]);
  }

  const FeaturePipeline pipe =
      fit_feature_pipeline(rows, raw_parts[0], spec.pca_components);
  DataBundle bundle;
  bundle.train = apply_feature_pipeline(pipe, rows, raw_parts[0]);
  bundle.validation = apply_feature_pipeline(pipe, rows, raw_parts[1]);
  bundle.test = apply_feature_pipeline(pipe, rows, raw_parts[2]);
  bundle.report = rows.report;
  return bundle;
}

/// Single-dataset variant for inspection/export: transforms are fit on every
/// row, so do not feed the result into a train/evaluate experiment.
inline Dataset load_tabular_full(const std::string& path, const PreprocessSpec& spec) {
  const CsvTable table = detail::read_table_with_fallback(path, spec);
  ParsedRows rows = parse_rows(table, spec);
  if (rows.y.empty()) throw EmptyInputError(path + ": no usable rows");
  std::vector<std::size_t> all(rows.y.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const FeaturePipeline pipe = fit_feature_pipeline(rows, all, spec.pca_components);
  return apply_feature_pipeline(pipe, rows, all);
}

/// Census-income pipeline: 5 numeric columns, 6 categorical columns reduced
/// to 15 PCA components, 20 standardized features; y = high income,
/// z = 0 female / 1 male. Accepts the headerless UCI distribution.
inline PreprocessSpec adult_spec() {
  PreprocessSpec spec;
  spec.numeric_columns = {"age", "education-num", "hours-per-week", "capital-loss",
                          "capital-gain"};
  spec.categorical_columns = {"workclass", "education", "marital-status", "occupation",
                              "relationship", "race"};
  spec.pca_components = 15;
  spec.label.column = "income";
  spec.label.mapping = {{">50K", 1}, {"<=50K", 0}};
  spec.label.strip_trailing_dot = true;
  spec.sensitive.column = "sex";
  spec.sensitive.mapping = {{"Female", 0}, {"Male", 1}};
  spec.sensitive.drop_unmapped = false;
  spec.headerless_names = {"age",          "workclass",      "fnlwgt",
                           "education",    "education-num",  "marital-status",
                           "occupation",   "relationship",   "race",
                           "sex",          "capital-gain",   "capital-loss",
                           "hours-per-week", "native-country", "income"};
  return spec;
}

/// Recidivism pipeline: 9 numeric features (two derived: an age-bucket
/// ordinal and jail days from the jail timestamps), charge degree and sex
/// reduced to 2 PCA components; z = 0 Caucasian / 1 African-American /
/// 2 Hispanic, other rows dropped.
inline PreprocessSpec compas_spec() {
  PreprocessSpec spec;
  spec.numeric_columns = {"age",
                          "juv_fel_count",
                          "juv_misd_count",
                          "juv_other_count",
                          "priors_count",
                          "days_b_screening_arrest",
                          "decile_score"};
  DerivedColumn age_cat;
  age_cat.name = "age_cat_ordinal";
  age_cat.kind = DerivedColumn::Kind::ordinal;
  age_cat.column_a = "age_cat";
  age_cat.ordinal_map = {{"Less than 25", 0.0}, {"25 - 45", 1.0}, {"Greater than 45", 2.0}};
  DerivedColumn jail;
  jail.name = "jail_days";
  jail.kind = DerivedColumn::Kind::date_diff_days;
  jail.column_a = "c_jail_out";
  jail.column_b = "c_jail_in";
  spec.derived_columns = {age_cat, jail};
  spec.categorical_columns = {"c_charge_degree", "sex"};
  spec.pca_components = 2;
  spec.label.column = "two_year_recid";
  spec.label.mapping = {{"1", 1}, {"0", 0}};
  spec.sensitive.column = "race";
  spec.sensitive.mapping = {{"Caucasian", 0}, {"African-American", 1}, {"Hispanic", 2}};
  spec.sensitive.drop_unmapped = true;
  return spec;
}

inline DataBundle load_adult(const std::string& path, const SplitSpec& split_spec,
                             bool balance = true, std::uint64_t balance_seed = 0) {
  return load_tabular(path, adult_spec(), split_spec, balance, balance_seed);
}

inline DataBundle load_compas(const std::string& path, const SplitSpec& split_spec,
                              bool balance = false, std::uint64_t balance_seed = 0) {
  return load_tabular(path, compas_spec(), split_spec, balance, balance_seed);
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

/// A dataset plus the indices of its planted bad rows. The index list is
/// bookkeeping for evaluation only; samples carry no marker.
struct SyntheticData {
  Dataset dataset;
  std::vector<std::size_t> bad_indices;
};

/// n clean draws from N(0, sigma^2 I) followed by round(n/K) bad draws
/// centered gamma*sigma away along a seeded random direction. Single class
/// and group: this is the spectral-separation test bed, not classification
/// data.
inline SyntheticData synth_theorem1(const SyntheticSpec& spec) {
  validate(spec);
  const std::size_t n_bad = bad_count(spec);
  Rng rng = make_rng(derive_seed(spec.seed, 0x54483031));  // "TH01"
  const Vec direction = random_unit_vector(spec.dim, rng);
  Vec bad_center(spec.dim, 0.0);
  add_scaled(bad_center, direction, spec.gamma * spec.sigma);

  std::normal_distribution<double> noise(0.0, spec.sigma);
  std::vector<Sample> samples;
  samples.reserve(spec.n + n_bad);
  for (std::size_t i = 0; i < spec.n; ++i) {
    Sample s;
    s.x.resize(spec.dim);
    for (double& v : s.x) v = noise(rng);
    samples.push_back(std::move(s));
  }
  SyntheticData out;
  out.bad_indices.reserve(n_bad);
  for (std::size_t i = 0; i < n_bad; ++i) {
    Sample s;
    s.x = bad_center;
    for (double& v : s.x) v += noise(rng);
    out.bad_indices.push_back(samples.size());
    samples.push_back(std::move(s));
  }
  out.dataset = Dataset::infer(std::move(samples), spec.dim);
  return out;
}

/// Classification data where group 1 positives are well separated but group 0
/// positives sit near the boundary, so accuracy-optimal models have a TPR gap.
inline Dataset synth_biased(const BiasedSyntheticSpec& spec) {
  if (spec.n < 8) throw ConfigError("synth_biased: need at least 8 samples");
  if (spec.dim == 0) throw ConfigError("synth_biased: dim must be >= 1");
  Rng rng = make_rng(derive_seed(spec.seed, 0x42494153));  // "BIAS"
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Sample> samples;
  samples.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    Sample s;
    s.y = static_cast<int>(i % 2);
    s.z = static_cast<int>((i / 2) % 2);
    double offset = -spec.separation;
    if (s.y == 1) offset = s.z == 1 ? spec.separation : spec.separation * spec.group_bias;
    s.x.resize(spec.dim);
    for (double& v : s.x) v = noise(rng);
    s.x[0] += offset;
    samples.push_back(std::move(s));
  }
  return Dataset::infer(std::move(samples), spec.dim);
}

// ---------------------------------------------------------------------------
// Generic numeric CSV and dataset dumps
// ---------------------------------------------------------------------------

/// Escape hatch: every column is a ready-made numeric feature except the
/// integer `y` and `z` columns. No transform is fit.
inline Dataset load_numeric_csv(const std::string& path,
                                const std::string& label_column = "y",
                                const std::string& group_column = "z") {
  const CsvTable table = read_csv_file(path, /*has_header=*/true);
  if (table.header.empty()) throw SchemaError(path + ": missing header row");
  const std::size_t y_col = table.column(label_column);
  const std::size_t z_col = table.column(group_column);
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < table.header.size(); ++c)
    if (c != y_col && c != z_col) feature_cols.push_back(c);

  std::vector<Sample> samples;
  samples.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::vector<std::string>& row = table.rows[r];
    const std::size_t row_no = r + 1;
    if (row.size() != table.header.size())
      throw RowError("row " + std::to_string(row_no) + ": field count mismatch", row_no);
    Sample s;
    s.x.reserve(feature_cols.size());
    for (std::size_t c : feature_cols) s.x.push_back(parse_double(trim(row[c]), row_no));
    s.y = static_cast<int>(parse_long(trim(row[y_col]), row_no));
    s.z = static_cast<int>(parse_long(trim(row[z_col]), row_no));
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw EmptyInputError(path + ": no rows");
  return Dataset::infer(std::move(samples), feature_cols.size());
}

/// Dump with an origin column: 1 for rows named in `poison_indices`, else 0.
inline void write_dataset_csv(const Dataset& dataset, std::ostream& out,
                              const std::vector<std::size_t>* poison_indices = nullptr) {
  std::vector<char> origin(dataset.size(), 0);
  if (poison_indices)
    for (std::size_t i : *poison_indices)
      if (i < origin.size()) origin[i] = 1;
  std::vector<std::string> header;
  for (std::size_t j = 0; j < dataset.dim(); ++j) header.push_back("x" + std::to_string(j));
  header.push_back("y");
  header.push_back("z");
  header.push_back("origin");
  write_csv_row(out, header);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Sample& s = dataset.sample(i);
    std::vector<std::string> fields;
    fields.reserve(dataset.dim() + 3);
    for (double v : s.x) fields.push_back(format_double(v));
    fields.push_back(std::to_string(s.y));
    fields.push_back(std::to_string(s.z));
    fields.push_back(origin[i] ? "1" : "0");
    write_csv_row(out, fields);
  }
}

inline void write_dataset_csv(const Dataset& dataset, const std::string& path,
                              const std::vector<std::size_t>* poison_indices = nullptr) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_dataset_csv(dataset, out, poison_indices);
}

}  // namespace fairsan
