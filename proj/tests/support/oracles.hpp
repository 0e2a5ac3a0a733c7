#pragma once

// Independent reference implementations for testing: these deliberately use
// different algorithms (and extended precision where it matters) than the
// library code they check.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <unistd.h>

#include "fairsan/classifier.hpp"
#include "fairsan/dataset.hpp"
#include "fairsan/vecmath.hpp"

namespace oracles {

using fairsan::Dataset;
using fairsan::LinearModel;
using fairsan::Matrix;
using fairsan::Sample;
using fairsan::Vec;

// ---------------------------------------------------------------------------
// Dense symmetric eigensolver (cyclic Jacobi rotations)
// ---------------------------------------------------------------------------

struct EigenDecomposition {
  Vec values;       // descending
  Matrix vectors;   // vectors[k] pairs with values[k]
};

/// Classic Jacobi sweep eigensolver for a symmetric matrix.
inline EigenDecomposition jacobi_eigen(Matrix a) {
  const std::size_t n = a.size();
  for (const Vec& row : a)
    if (row.size() != n) throw std::invalid_argument("jacobi_eigen: not square");
  Matrix v(n, Vec(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-26) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::fabs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t l, std::size_t r) { return a[l][l] > a[r][r]; });
  EigenDecomposition out;
  out.values.reserve(n);
  out.vectors.reserve(n);
  for (std::size_t k : order) {
    out.values.push_back(a[k][k]);
    Vec col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = v[i][k];
    out.vectors.push_back(std::move(col));
  }
  return out;
}

inline Matrix gram_matrix(const Matrix& rows) {
  if (rows.empty()) throw std::invalid_argument("gram_matrix: empty");
  const std::size_t d = rows.front().size();
  Matrix g(d, Vec(d, 0.0));
  for (const Vec& row : rows)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) g[i][j] += row[i] * row[j];
  return g;
}

/// Top right singular vector of a row matrix via the dense Jacobi eigensolver.
inline Vec top_singular_vector_oracle(const Matrix& rows) {
  return jacobi_eigen(gram_matrix(rows)).vectors.front();
}

// ---------------------------------------------------------------------------
// Brute-force k-NN distance scores
// ---------------------------------------------------------------------------

/// Distance to the k-th nearest same-class neighbor, by full sort (self
/// excluded).
inline Vec knn_scores_oracle(const Dataset& data, std::size_t k) {
  Vec scores(data.size(), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    Vec dists;
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (j == i) continue;
      if (data.sample(j).y != data.sample(i).y) continue;
      dists.push_back(fairsan::distance(data.sample(i).x, data.sample(j).x));
    }
    if (dists.size() < k)
      throw std::invalid_argument("knn_scores_oracle: class too small");
    std::sort(dists.begin(), dists.end());
    scores[i] = dists[k - 1];
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Central finite differences
// ---------------------------------------------------------------------------

/// Central-difference gradient of f over the flattened (w..., b) vector.
template <typename F>
inline Vec central_difference(F&& f, const LinearModel& at, double h = 1e-5) {
  Vec theta = at.w;
  theta.push_back(at.b);
  Vec grad(theta.size(), 0.0);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double step = h * std::max(1.0, std::fabs(theta[i]));
    LinearModel plus{at.w, at.b}, minus{at.w, at.b};
    if (i < at.w.size()) {
      plus.w[i] += step;
      minus.w[i] -= step;
    } else {
      plus.b += step;
      minus.b -= step;
    }
    grad[i] = (f(plus) - f(minus)) / (2.0 * step);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Extended-precision logistic loss
// ---------------------------------------------------------------------------

inline long double logistic_loss_oracle(long double margin) {
  if (margin > 36.0L) return std::exp(-margin);  // log1p(e^-m) ~= e^-m here
  if (margin < -36.0L) return -margin + std::log1p(std::exp(margin));
  return std::log1p(std::exp(-margin));
}

// ---------------------------------------------------------------------------
// Date arithmetic (days-from-civil, independent of std::chrono)
// ---------------------------------------------------------------------------

inline long days_from_civil_oracle(long y, unsigned m, unsigned d) {
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long>(doe) - 719468;
}

// ---------------------------------------------------------------------------
// Worst-feasible-sample grid search (2-D instances)
// ---------------------------------------------------------------------------

struct GridSearchBest {
  Vec x;
  int y = 0;
  double loss = -1.0;
};

/// Exhaustive polar-grid search over the feasible balls around 2-D class
/// centers: `radii x angles` interior/boundary points per class.
inline GridSearchBest worst_feasible_grid_oracle(const LinearModel& model,
                                                 const std::map<int, Vec>& centers,
                                                 double d, std::size_t radii = 100,
                                                 std::size_t angles = 100) {
  GridSearchBest best;
  for (const auto& [label, mu] : centers) {
    if (mu.size() != 2) throw std::invalid_argument("oracle expects 2-D centers");
    const double yy = label == 1 ? 1.0 : -1.0;
    for (std::size_t r = 0; r < radii; ++r) {
      const double radius = d * static_cast<double>(r) / (radii > 1 ? radii - 1 : 1);
      for (std::size_t a = 0; a < angles; ++a) {
        const double angle =
            2.0 * 3.14159265358979323846 * static_cast<double>(a) / angles;
        const Vec x = {mu[0] + radius * std::cos(angle), mu[1] + radius * std::sin(angle)};
        const double margin = yy * (fairsan::dot(model.w, x) + model.b);
        const double loss = static_cast<double>(logistic_loss_oracle(margin));
        if (loss > best.loss) {
          best.loss = loss;
          best.x = x;
          best.y = label;
        }
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Scratch directories
// ---------------------------------------------------------------------------

/// Unique directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "fairsan-test") {
    static std::atomic<unsigned> counter{0};
    const auto base = std::filesystem::temp_directory_path();
    path_ = base / (tag + "-" + std::to_string(::getpid()) + "-" +
                    std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// ---------------------------------------------------------------------------
// Small random datasets
// ---------------------------------------------------------------------------

inline Dataset random_dataset(std::size_t n, std::size_t dim, std::mt19937_64& rng,
                              int groups = 2) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Sample> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.y = static_cast<int>(i % 2);
    s.z = static_cast<int>((i / 2) % groups);
    s.x.resize(dim);
    // Shift by class so both labels stay learnable and k-NN classes cohere.
    for (std::size_t j = 0; j < dim; ++j)
      s.x[j] = normal(rng) + (s.y == 1 ? 1.5 : -1.5);
    samples.push_back(std::move(s));
  }
  return Dataset::infer(std::move(samples), dim);
}

}  // namespace oracles
