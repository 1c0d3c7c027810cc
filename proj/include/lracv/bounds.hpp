#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "lracv/dataset.hpp"
#include "lracv/exact.hpp"
#include "lracv/glm.hpp"
#include "lracv/parallel.hpp"
#include "lracv/solver.hpp"

namespace lracv {

// Certified per-point error machinery for one datapoint.
struct PerPointBounds {
  double m_n = 0;       // curvature-variation envelope
  double e_n = 0;       // propagated quadratic-form error (may be +inf)
  double eta_n = 0;     // certified |q - qt| bound, copied from the QnSet
  double ns_bound = 0;  // |ns prediction - exact loo prediction| upper bound
  double ij_bound = 0;  // |ij prediction - exact loo prediction| upper bound
  double z_lo = 0;      // linear-predictor interval containing both z_n and
  double z_hi = 0;      // x_n' theta_{-n}
};

// Symmetric interval |z| <= |z_n| + |d1_n| ||x_n||^2 / (N lambda) that
// contains x_n' theta for every theta on the segment between the full fit
// and the leave-one-out fit (parameter-shift bound + Cauchy-Schwarz).
inline std::pair<double, double> zn_interval(const FitState& fit, const Dataset& data,
                                             Eigen::Index n) {
  const double radius =
      std::abs(fit.z[n]) + std::abs(fit.d1[n]) * data.row_norm_sq(n) /
                               (static_cast<double>(data.n()) * fit.lambda);
  return {-radius, radius};
}

// M_n = d3_envelope(family, Z_n) * (1/N) sum_{m != n} ||x_m||^2. The total
// sum of squared row norms is accepted precomputed so each call is O(1).
inline double mn_bound(const FitState& fit, const Dataset& data, GlmFamily family,
                       Eigen::Index n, double sum_row_norms_sq) {
  const auto [z_lo, z_hi] = zn_interval(fit, data, n);
  const double rest = (sum_row_norms_sq - data.row_norm_sq(n)) / static_cast<double>(data.n());
  return d3_envelope(family, z_lo, z_hi) * rest;
}

inline double mn_bound(const FitState& fit, const Dataset& data, GlmFamily family,
                       Eigen::Index n) {
  return mn_bound(fit, data, family, n, data.sum_row_norms_sq());
}

// Worst-case change of the Newton-step map g(q) = q / (1 - d2 q) when q
// moves by at most eta around q_tilde. `d2` is the effective curvature
// d2_n / N. Returns +inf when the denominator vanishes (within kPoleGuard)
// or changes sign anywhere across [q_tilde - eta, q_tilde + eta].
inline double en_bound(double q_tilde, double eta, double d2) {
  if (!(q_tilde >= 0) || !(eta >= 0)) throw ConfigError("en_bound: q_tilde, eta must be >= 0");
  if (!std::isfinite(eta)) return kInf;
  const double denom_mid = 1.0 - d2 * q_tilde;
  const double denom_hi = 1.0 - d2 * (q_tilde + eta);
  const double denom_lo = 1.0 - d2 * (q_tilde - eta);
  const double guard = kPoleGuard;
  if (std::abs(denom_mid) < guard || std::abs(denom_hi) < guard || std::abs(denom_lo) < guard) {
    return kInf;
  }
  if ((denom_mid > 0) != (denom_hi > 0) || (denom_mid > 0) != (denom_lo > 0)) {
    return kInf;
  }
  const double g_mid = q_tilde / denom_mid;
  const double g_hi = (q_tilde + eta) / denom_hi;
  const double g_lo = (q_tilde - eta) / denom_lo;
  return std::max(std::abs(g_hi - g_mid), std::abs(g_lo - g_mid));
}

// Certified per-point bounds:
//   ns_bound = (M_n / (N^2 lambda^3)) |d1_n|^2 ||x_n||^3 + |d1_n| E_n
//   ij_bound = (M_n / (N^2 lambda^3)) |d1_n|^2 ||x_n||^3
//              + (1/(N^2 lambda^2)) |d1_n| d2_n ||x_n||^4 + |d1_n| eta_n
inline std::vector<PerPointBounds> certified_error_bounds(const FitState& fit, const Dataset& data,
                                                   GlmFamily family, const QnSet& qn,
                                                   int threads = 1) {
  const Eigen::Index n = data.n();
  const double nd = static_cast<double>(n);
  const double lambda = fit.lambda;
  const double total_sq = data.sum_row_norms_sq();
  std::vector<PerPointBounds> out(static_cast<std::size_t>(n));
  parallel_for(0, n, threads, [&](Eigen::Index i) {
    PerPointBounds& b = out[static_cast<std::size_t>(i)];
    const auto [z_lo, z_hi] = zn_interval(fit, data, i);
    b.z_lo = z_lo;
    b.z_hi = z_hi;
    b.m_n = mn_bound(fit, data, family, i, total_sq);
    b.eta_n = qn.eta[i];
    b.e_n = en_bound(qn.q[i], qn.eta[i], fit.d2[i] / nd);
    const double abs_d1 = std::abs(fit.d1[i]);
    const double norm = data.row_norm(i);
    const double norm_sq = norm * norm;
    if (abs_d1 == 0.0) {
      // d1_n = 0 leaves the leave-one-out optimum unchanged: zero error,
      // even when m_n or e_n overflow to +inf.
      b.ns_bound = 0.0;
      b.ij_bound = 0.0;
      return;
    }
    const double shared =
        b.m_n / (nd * nd * lambda * lambda * lambda) * abs_d1 * abs_d1 * norm_sq * norm;
    b.ns_bound = shared + abs_d1 * b.e_n;
    b.ij_bound = shared + abs_d1 * fit.d2[i] * norm_sq * norm_sq / (nd * nd * lambda * lambda) +
                 abs_d1 * qn.eta[i];
  });
  return out;
}

struct ErrInterval {
  double lo = 0;
  double hi = 0;
  bool vacuous = false;  // bound was +inf; interval is [0, inf)
};

// Exact range of Err(z, y) over z in [prediction - bound, prediction + bound].
inline ErrInterval err_interval(double prediction, double bound, ErrMetric metric, double y) {
  if (!(bound >= 0)) throw ConfigError("err_interval: bound must be >= 0");
  if (!std::isfinite(bound)) return {0.0, kInf, true};
  const double a = prediction - bound;
  const double b = prediction + bound;
  const double err_a = eval_err(metric, a, y);
  const double err_b = eval_err(metric, b, y);
  ErrInterval out;
  out.hi = std::max(err_a, err_b);
  out.lo = std::min(err_a, err_b);
  switch (metric) {
    case ErrMetric::squared_of_mean:
    case ErrMetric::absolute:
      // exp(z) - y crosses 0 inside the interval iff y > 0 and log y is
      // interior; the metric then attains its interior minimum 0.
      if (y > 0) {
        const double root = std::log(y);
        if (root > a && root < b) out.lo = 0.0;
      }
      break;
    case ErrMetric::logistic_loss:
      break;  // monotone in z for y = +-1: extrema at the endpoints
  }
  return out;
}

struct FallbackPolicy {
  enum class Kind { none, top_j, threshold };
  Kind kind = Kind::none;
  int j = 0;
  double tau = kInf;
};

// Indices whose bound values exceed the policy; non-finite bounds are always
// selected. top_j breaks value ties by lower index for determinism.
inline std::vector<Eigen::Index> fallback_select(const Eigen::VectorXd& bounds,
                                                 const FallbackPolicy& policy) {
  const Eigen::Index n = bounds.size();
  std::vector<Eigen::Index> selected;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(bounds[i])) selected.push_back(i);
  }
  if (policy.kind == FallbackPolicy::Kind::threshold) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::isfinite(bounds[i]) && bounds[i] > policy.tau) selected.push_back(i);
    }
  } else if (policy.kind == FallbackPolicy::Kind::top_j && policy.j > 0) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      const double va = std::isfinite(bounds[a]) ? bounds[a] : kInf;
      const double vb = std::isfinite(bounds[b]) ? bounds[b] : kInf;
      if (va != vb) return va > vb;
      return a < b;
    });
    for (Eigen::Index rank = 0; rank < std::min<Eigen::Index>(policy.j, n); ++rank) {
      const Eigen::Index idx = order[static_cast<std::size_t>(rank)];
      if (std::isfinite(bounds[idx])) selected.push_back(idx);  // infinite ones already in
    }
  }
  std::sort(selected.begin(), selected.end());
  selected.erase(std::unique(selected.begin(), selected.end()), selected.end());
  return selected;
}

}  // namespace lracv
