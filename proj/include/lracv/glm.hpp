#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "lracv/errors.hpp"

namespace lracv {

// Loss families for per-observation losses f(z, y), z = x'theta.
//   logistic: f = log(1 + exp(-y z)),  y in {-1, +1}
//   poisson : f = exp(z) - y z,        y in {0, 1, 2, ...}  (log(y!) dropped)
//   gaussian: f = (z - y)^2 / 2,       y real
enum class GlmFamily { logistic, poisson, gaussian };

// Out-of-sample discrepancy metrics Err(z, y).
enum class ErrMetric { squared_of_mean, logistic_loss, absolute };

struct Derivs {
  double f;   // loss value
  double d1;  // df/dz
  double d2;  // d2f/dz2 (>= 0: convexity)
  double d3;  // d3f/dz3
};

inline double sigmoid(double t) {
  if (t >= 0) {
    const double e = std::exp(-t);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// log(1 + exp(u)) without overflow for large |u|.
inline double log1p_exp(double u) {
  if (u > 0) return u + std::log1p(std::exp(-u));
  return std::log1p(std::exp(u));
}

inline bool response_in_domain(GlmFamily family, double y) {
  switch (family) {
    case GlmFamily::logistic:
      return y == 1.0 || y == -1.0;
    case GlmFamily::poisson:
      return std::isfinite(y) && y >= 0.0 && y == std::floor(y);
    case GlmFamily::gaussian:
      return std::isfinite(y);
  }
  return false;
}

inline void check_response(GlmFamily family, double y) {
  if (!response_in_domain(family, y)) {
    throw DataError("response " + std::to_string(y) + " outside family domain");
  }
}

// Loss value and first three z-derivatives at (z, y).
inline Derivs eval_derivatives(GlmFamily family, double z, double y) {
  switch (family) {
    case GlmFamily::logistic: {
      const double p = sigmoid(-y * z);  // P(misfit side)
      const double q = sigmoid(y * z);
      const double d2 = p * q;
      return {log1p_exp(-y * z), -y * p, d2, y * d2 * (p - q)};
    }
    case GlmFamily::poisson: {
      const double ez = std::exp(z);
      return {ez - y * z, ez - y, ez, ez};
    }
    case GlmFamily::gaussian:
      return {0.5 * (z - y) * (z - y), z - y, 1.0, 0.0};
  }
  throw ConfigError("unknown family");
}

// Tight supremum of |d3| for the logistic loss: max of p(1-p)|1-2p| over p.
inline constexpr double kLogisticD3Sharp = 0.09622504486493764;  // 1/(6*sqrt(3))

// Upper bound on max |d3(z, .)| over z in [z_lo, z_hi].
// `sharp` switches the logistic envelope from the conventional 1/4 to the
// tight supremum; both are valid envelopes.
inline double d3_envelope(GlmFamily family, double z_lo, double z_hi, bool sharp = false) {
  if (z_lo > z_hi) throw ConfigError("d3_envelope: empty interval");
  switch (family) {
    case GlmFamily::logistic:
      return sharp ? kLogisticD3Sharp : 0.25;
    case GlmFamily::poisson:
      return std::exp(z_hi);
    case GlmFamily::gaussian:
      return 0.0;
  }
  throw ConfigError("unknown family");
}

inline double eval_err(ErrMetric metric, double z, double y) {
  switch (metric) {
    case ErrMetric::squared_of_mean: {
      const double r = std::exp(z) - y;
      return r * r;
    }
    case ErrMetric::logistic_loss:
      return log1p_exp(-y * z);
    case ErrMetric::absolute:
      return std::abs(std::exp(z) - y);
  }
  throw ConfigError("unknown metric");
}

inline GlmFamily family_from_string(const std::string& s) {
  if (s == "logistic") return GlmFamily::logistic;
  if (s == "poisson") return GlmFamily::poisson;
  if (s == "gaussian") return GlmFamily::gaussian;
  throw ConfigError("unknown family '" + s + "' (expected logistic|poisson|gaussian)");
}

inline std::string to_string(GlmFamily family) {
  switch (family) {
    case GlmFamily::logistic: return "logistic";
    case GlmFamily::poisson: return "poisson";
    case GlmFamily::gaussian: return "gaussian";
  }
  return "?";
}

inline ErrMetric metric_from_string(const std::string& s) {
  if (s == "squared" || s == "squared_of_mean") return ErrMetric::squared_of_mean;
  if (s == "logistic" || s == "logistic_loss") return ErrMetric::logistic_loss;
  if (s == "absolute" || s == "abs") return ErrMetric::absolute;
  throw ConfigError("unknown metric '" + s + "' (expected squared|logistic|absolute)");
}

inline std::string to_string(ErrMetric metric) {
  switch (metric) {
    case ErrMetric::squared_of_mean: return "squared";
    case ErrMetric::logistic_loss: return "logistic";
    case ErrMetric::absolute: return "absolute";
  }
  return "?";
}

}  // namespace lracv
