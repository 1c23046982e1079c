#pragma once

#include <stdexcept>
#include <string>

namespace trex {

/// Invalid input: bad dimensions, broken invariants, unusable configuration.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Numerical breakdown: a factorization failed or an iterate left the
/// feasible region.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File-format error with the 1-based position of the offending token.
struct ParseError : std::runtime_error {
  int line;
  int column;
  ParseError(const std::string& message, int line_, int column_)
      : std::runtime_error(message), line(line_), column(column_) {}
};

}  // namespace trex
