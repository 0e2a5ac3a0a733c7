#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

#include "fairsan/vecmath.hpp"

namespace fairsan {

struct EmptyInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct MissingClassError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A group lacks the samples needed to evaluate its rate (e.g. no positives).
struct MissingSupportError : std::invalid_argument {
  MissingSupportError(const std::string& what, int group)
      : std::invalid_argument(what), group(group) {}
  int group;
};

struct InsufficientClassError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DegenerateMatrixError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Iterative solver hit its iteration cap; carries the last iterate so callers
/// can inspect how far it got.
struct ConvergenceError : std::runtime_error {
  ConvergenceError(const std::string& what, Vec iterate)
      : std::runtime_error(what), last_iterate(std::move(iterate)) {}
  Vec last_iterate;
};

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Parse failure tied to a specific data row (0-based, excluding the header).
struct RowError : std::runtime_error {
  RowError(const std::string& what, std::size_t row)
      : std::runtime_error(what), row(row) {}
  std::size_t row;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AttackError : std::runtime_error {
  AttackError(const std::string& what, std::size_t iteration)
      : std::runtime_error(what), iteration(iteration) {}
  std::size_t iteration;
};

struct DefenseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fairsan
