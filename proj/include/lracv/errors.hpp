#pragma once

#include <stdexcept>
#include <string>

namespace lracv {

// Base for all library errors. Subclasses map onto CLI exit codes:
// ConfigError/DataError -> 2, NumericalError/SolverError -> 3, IoError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad flags, inconsistent options, out-of-range args.
struct ConfigError : Error {
  using Error::Error;
};

// Invalid data: responses outside the family domain, malformed input files.
struct DataError : Error {
  using Error::Error;
};

// Numerical failure: factorization breakdown, divergence, rank deficiency.
struct NumericalError : Error {
  using Error::Error;
};

// Optimizer did not reach the requested tolerance.
struct SolverError : NumericalError {
  SolverError(const std::string& msg, double grad_norm)
      : NumericalError(msg), last_grad_norm(grad_norm) {}
  double last_grad_norm;
};

// Filesystem / serialization failure.
struct IoError : Error {
  using Error::Error;
};

}  // namespace lracv
