#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace fairsan {

using Vec = std::vector<double>;
using Matrix = std::vector<Vec>;  // row-major list of rows

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(const Vec& a) { return dot(a, a); }

inline double norm(const Vec& a) { return std::sqrt(squared_norm(a)); }

inline double distance(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline void add_scaled(Vec& out, const Vec& v, double c) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * v[i];
}

inline void scale(Vec& v, double c) {
  for (double& x : v) x *= c;
}

/// Normalizes in place; returns false (vector untouched) when the norm is zero.
inline bool normalize(Vec& v) {
  const double n = norm(v);
  if (n == 0.0) return false;
  scale(v, 1.0 / n);
  return true;
}

inline bool all_finite(const Vec& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace fairsan
