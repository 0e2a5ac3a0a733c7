#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fairsan/dataset.hpp"
#include "fairsan/error.hpp"
#include "fairsan/vecmath.hpp"

namespace fairsan {

/// Rows of a subgroup with the subgroup mean subtracted. Column sums are zero
/// by construction; source_indices maps each row back to the parent dataset.
struct CenteredMatrix {
  Matrix rows;
  std::vector<std::size_t> source_indices;
  Vec mean;
};

inline CenteredMatrix center_matrix(const Dataset& dataset, const SubgroupView& view) {
  if (view.indices.empty()) throw EmptyInputError("center_matrix: empty view");
  const std::size_t dim = dataset.dim();
  Vec mean(dim, 0.0);
  for (std::size_t i : view.indices) add_scaled(mean, dataset.sample(i).x, 1.0);
  scale(mean, 1.0 / static_cast<double>(view.indices.size()));

  CenteredMatrix out;
  out.mean = mean;
  out.source_indices = view.indices;
  out.rows.reserve(view.indices.size());
  for (std::size_t i : view.indices) {
    Vec row = dataset.sample(i).x;
    add_scaled(row, mean, -1.0);
    out.rows.push_back(std::move(row));
  }
  return out;
}

/// Centers arbitrary rows (column means subtracted). Used where no Dataset is
/// in play, e.g. gradient matrices.
inline Matrix center_rows(const Matrix& rows) {
  if (rows.empty()) throw EmptyInputError("center_rows: no rows");
  const std::size_t dim = rows.front().size();
  Vec mean(dim, 0.0);
  for (const Vec& r : rows) add_scaled(mean, r, 1.0);
  scale(mean, 1.0 / static_cast<double>(rows.size()));
  Matrix out = rows;
  for (Vec& r : out) add_scaled(r, mean, -1.0);
  return out;
}

namespace detail {

// dim x dim Gram matrix Q^T Q of the row set.
inline Matrix gram(const Matrix& rows, std::size_t dim) {
  Matrix g(dim, Vec(dim, 0.0));
  for (const Vec& r : rows) {
    for (std::size_t i = 0; i < dim; ++i) {
      if (r[i] == 0.0) continue;
      for (std::size_t j = i; j < dim; ++j) g[i][j] += r[i] * r[j];
    }
  }
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < i; ++j) g[i][j] = g[j][i];
  return g;
}

inline Vec matvec(const Matrix& m, const Vec& v) {
  Vec out(m.size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = dot(m[i], v);
  return out;
}

inline double frobenius(const Matrix& m) {
  double s = 0.0;
  for (const Vec& r : m) s += squared_norm(r);
  return std::sqrt(s);
}

// Flips the sign so the first component above threshold is positive.
inline void fix_sign(Vec& v) {
  for (double x : v) {
    if (std::abs(x) > 1e-12) {
      if (x < 0.0) scale(v, -1.0);
      return;
    }
  }
}

// Power iteration for the top eigenvector of a symmetric PSD matrix.
// Deterministic start: normalized all-ones, falling back to basis vectors if
// the iterate lands in the null space. Converged when the eigen-residual
// drops below tol times the Rayleigh quotient.
inline Vec top_eigenvector(const Matrix& g, double tol, int max_iters,
                           const std::string& who) {
  const std::size_t dim = g.size();
  const double scale_f = frobenius(g);
  if (scale_f == 0.0) throw DegenerateMatrixError(who + ": zero matrix");

  Vec v(dim, 1.0);
  normalize(v);
  std::size_t next_basis = 0;
  for (int it = 0; it < max_iters; ++it) {
    Vec gv = matvec(g, v);
    const double rho = dot(v, gv);  // >= 0 for PSD input
    Vec resid = gv;
    add_scaled(resid, v, -rho);
    if (rho > 0.0 && norm(resid) <= tol * rho) {
      fix_sign(v);
      return v;
    }
    if (norm(gv) <= 1e-13 * scale_f) {
      // Stagnated in (numerically) the null space; probe the next basis axis.
      if (next_basis >= dim)
        throw DegenerateMatrixError(who + ": no direction with positive variance");
      v.assign(dim, 0.0);
      v[next_basis++] = 1.0;
      continue;
    }
    normalize(gv);
    v = std::move(gv);
  }
  throw ConvergenceError(who + ": power iteration did not converge within " +
                             std::to_string(max_iters) + " iterations",
                         v);
}

// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
// Returns eigenvalues sorted descending with matching unit eigenvectors as
// rows. Robust to repeated eigenvalues, which defeat power iteration.
struct SymmetricEigen {
  Vec values;
  Matrix vectors;  // vectors[j] pairs with values[j]
};

inline SymmetricEigen eigen_symmetric(Matrix a, int max_sweeps = 64) {
  const std::size_t dim = a.size();
  Matrix basis(dim, Vec(dim, 0.0));
  for (std::size_t i = 0; i < dim; ++i) basis[i][i] = 1.0;  // rows are the basis

  double off_scale = 0.0;
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) off_scale += a[i][j] * a[i][j];
  off_scale = std::sqrt(off_scale);

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = i + 1; j < dim; ++j) off += 2.0 * a[i][j] * a[i][j];
    if (std::sqrt(off) <= 1e-14 * std::max(off_scale, 1e-300)) break;

    for (std::size_t p = 0; p + 1 < dim; ++p) {
      for (std::size_t q = p + 1; q < dim; ++q) {
        const double apq = a[p][q];
        if (apq == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t r = 0; r < dim; ++r) {
          const double arp = a[r][p];
          const double arq = a[r][q];
          a[r][p] = c * arp - s * arq;
          a[r][q] = s * arp + c * arq;
        }
        for (std::size_t r = 0; r < dim; ++r) {
          const double apr = a[p][r];
          const double aqr = a[q][r];
          a[p][r] = c * apr - s * aqr;
          a[q][r] = s * apr + c * aqr;
        }
        for (std::size_t r = 0; r < dim; ++r) {
          const double bp = basis[p][r];
          const double bq = basis[q][r];
          basis[p][r] = c * bp - s * bq;
          basis[q][r] = s * bp + c * bq;
        }
      }
    }
  }

  std::vector<std::size_t> order(dim);
  for (std::size_t i = 0; i < dim; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&a](std::size_t l, std::size_t r) { return a[l][l] > a[r][r]; });

  SymmetricEigen out;
  out.values.reserve(dim);
  out.vectors.reserve(dim);
  for (std::size_t idx : order) {
    out.values.push_back(a[idx][idx]);
    Vec v = basis[idx];
    fix_sign(v);
    out.vectors.push_back(std::move(v));
  }
  return out;
}

}  // namespace detail

/// Unit vector v maximizing ||Q v|| for the row matrix Q, computed by power
/// iteration on Q^T Q. Sign convention: first nonzero component positive.
/// Satisfies ||Q^T Q v - sigma^2 v|| <= tol * sigma^2 on return.
inline Vec top_right_singular_vector(const Matrix& rows, double tol = 1e-9,
                                     int max_iters = 10000) {
  if (rows.empty()) throw EmptyInputError("top_right_singular_vector: empty matrix");
  const std::size_t dim = rows.front().size();
  const Matrix g = detail::gram(rows, dim);
  return detail::top_eigenvector(g, tol, max_iters, "top_right_singular_vector");
}

/// Nearest-rank percentile: sorted ascending, element at ceil(q/100 * n) - 1.
inline double percentile_threshold(const std::vector<double>& scores, double q) {
  if (scores.empty()) throw EmptyInputError("percentile_threshold: no scores");
  if (!(q > 0.0 && q < 100.0))
    throw ConfigError("percentile_threshold: q must be in (0, 100)");
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  std::size_t rank = static_cast<std::size_t>(std::ceil(q / 100.0 * n));
  if (rank == 0) rank = 1;
  if (rank > sorted.size()) rank = sorted.size();
  return sorted[rank - 1];
}

/// k orthonormal principal directions plus the column means they were fit
/// around. directions[j] explains the most variance left after removing
/// directions 0..j-1.
struct PcaProjection {
  Matrix directions;  // k rows of length dim
  Vec means;
};

inline PcaProjection pca_fit(const Matrix& rows, std::size_t k) {
  if (rows.size() < 2) throw EmptyInputError("pca_fit: needs at least 2 rows");
  const std::size_t dim = rows.front().size();
  if (k > dim)
    throw DimensionError("pca_fit: k = " + std::to_string(k) + " exceeds dim = " +
                         std::to_string(dim));

  PcaProjection proj;
  proj.means.assign(dim, 0.0);
  for (const Vec& r : rows) add_scaled(proj.means, r, 1.0);
  scale(proj.means, 1.0 / static_cast<double>(rows.size()));

  Matrix centered = rows;
  for (Vec& r : centered) add_scaled(r, proj.means, -1.0);

  // A full Jacobi eigendecomposition handles repeated or vanishing
  // eigenvalues (one-hot blocks produce both); zero-variance directions
  // come back as an orthonormal completion of the basis for free.
  const detail::SymmetricEigen eigen =
      detail::eigen_symmetric(detail::gram(centered, dim));
  for (std::size_t j = 0; j < k; ++j) proj.directions.push_back(eigen.vectors[j]);
  return proj;
}

inline Vec pca_apply_row(const PcaProjection& proj, const Vec& row) {
  if (row.size() != proj.means.size())
    throw DimensionError("pca_apply: row dim " + std::to_string(row.size()) +
                         " does not match projection dim " +
                         std::to_string(proj.means.size()));
  Vec centered = row;
  add_scaled(centered, proj.means, -1.0);
  Vec out(proj.directions.size(), 0.0);
  for (std::size_t j = 0; j < proj.directions.size(); ++j)
    out[j] = dot(proj.directions[j], centered);
  return out;
}

inline Matrix pca_apply(const PcaProjection& proj, const Matrix& rows) {
  Matrix out;
  out.reserve(rows.size());
  for (const Vec& r : rows) out.push_back(pca_apply_row(proj, r));
  return out;
}

/// Per-column centering and scaling statistics fit on training rows.
/// Population (divide-by-n) standard deviation; zero-variance columns keep
/// scale 1 so they pass through centered.
struct Standardizer {
  Vec means;
  Vec stds;
};

inline Standardizer standardize_fit(const Matrix& train_rows) {
  if (train_rows.empty()) throw EmptyInputError("standardize_fit: no rows");
  const std::size_t dim = train_rows.front().size();
  const double n = static_cast<double>(train_rows.size());
  Standardizer s;
  s.means.assign(dim, 0.0);
  s.stds.assign(dim, 1.0);
  for (const Vec& r : train_rows) add_scaled(s.means, r, 1.0);
  scale(s.means, 1.0 / n);
  for (std::size_t j = 0; j < dim; ++j) {
    double var = 0.0;
    for (const Vec& r : train_rows) {
      const double d = r[j] - s.means[j];
      var += d * d;
    }
    var /= n;
    const double sd = std::sqrt(var);
    s.stds[j] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

inline void standardize_apply(const Standardizer& s, Matrix& rows) {
  for (Vec& r : rows) {
    if (r.size() != s.means.size())
      throw DimensionError("standardize_apply: row dim mismatch");
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = (r[j] - s.means[j]) / s.stds[j];
  }
}

}  // namespace fairsan
