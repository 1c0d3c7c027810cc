#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "lracv/dataset.hpp"
#include "lracv/errors.hpp"
#include "lracv/glm.hpp"
#include "lracv/parallel.hpp"
#include "lracv/solver.hpp"

namespace lracv {

// Shared guard for the Newton-step denominator 1 - (d2_n/N) q_n: predictions
// and interval maps whose denominator is this close to 0 are treated as
// poles and routed to fallback instead of emitting blown-up values.
inline constexpr double kPoleGuard = 1e-8;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// SPD factorization of H = (1/N) sum_n d2_n x_n x_n' + lambda I.
struct HessianFactor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::Index dim = 0;

  Eigen::VectorXd solve(const Eigen::VectorXd& v) const { return llt.solve(v); }
  Eigen::MatrixXd solve(const Eigen::MatrixXd& m) const { return llt.solve(m); }
};

inline HessianFactor factor_hessian(const FitState& fit, const Dataset& data,
                                    Eigen::Index dense_limit = 8192) {
  if (data.d() > dense_limit) {
    throw ConfigError("dense Hessian factorization requested at D = " +
                      std::to_string(data.d()) + " (limit " + std::to_string(dense_limit) + ")");
  }
  Eigen::MatrixXd h = data.weighted_gram(fit.d2) / static_cast<double>(data.n());
  h.diagonal().array() += fit.lambda;
  HessianFactor f;
  f.dim = data.d();
  f.llt.compute(h);
  if (f.llt.info() != Eigen::Success) {
    const double pivot = f.llt.matrixLLT().diagonal().minCoeff();
    throw NumericalError("Hessian factorization failed (smallest pivot " +
                         std::to_string(pivot) + ")");
  }
  return f;
}

enum class QnSource { exact, sketch, neumann };

inline std::string to_string(QnSource s) {
  switch (s) {
    case QnSource::exact: return "exact";
    case QnSource::sketch: return "sketch";
    case QnSource::neumann: return "neumann";
  }
  return "?";
}

// Quadratic forms q_n ~= x_n' H^{-1} x_n with certified absolute error
// bounds eta_n (zero for the exact source, +inf for uncertified sources).
struct QnSet {
  Eigen::VectorXd q;
  Eigen::VectorXd eta;
  QnSource source = QnSource::exact;
};

// Curvature-split cap: H >= lambda I + (d2_n/N) x_n x_n' implies
// x_n' H^{-1} x_n <= ||x_n||^2 / (lambda + (d2_n/N) ||x_n||^2).
inline double qn_cap(double row_norm_sq, double d2_over_n, double lambda) {
  return row_norm_sq / (lambda + d2_over_n * row_norm_sq);
}

inline Eigen::VectorXd qn_caps(const FitState& fit, const Dataset& data) {
  const double inv_n = 1.0 / static_cast<double>(data.n());
  Eigen::VectorXd caps(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    caps[i] = qn_cap(data.row_norm_sq(i), fit.d2[i] * inv_n, fit.lambda);
  }
  return caps;
}

// Exact quadratic forms via one SPD factorization and blocked triangular
// solves: q_n = ||L^{-1} x_n||^2.
inline QnSet exact_qn(const FitState& fit, const Dataset& data, int threads = 1) {
  const HessianFactor factor = factor_hessian(fit, data);
  const Eigen::Index n = data.n();
  QnSet out;
  out.q.resize(n);
  out.eta = Eigen::VectorXd::Zero(n);
  out.source = QnSource::exact;

  constexpr Eigen::Index kBlock = 256;
  const Eigen::Index blocks = (n + kBlock - 1) / kBlock;
  parallel_for(0, blocks, threads, [&](Eigen::Index b) {
    const Eigen::Index start = b * kBlock;
    const Eigen::Index count = std::min<Eigen::Index>(kBlock, n - start);
    Eigen::MatrixXd xt = data.rows_dense(start, count).transpose();
    factor.llt.matrixL().solveInPlace(xt);
    out.q.segment(start, count) = xt.colwise().squaredNorm();
  });

  const Eigen::VectorXd caps = qn_caps(fit, data);
  out.q = out.q.cwiseMin(caps).cwiseMax(0.0);
  return out;
}

// Per-point predictions; indices whose Newton-step denominator sits within
// kPoleGuard of zero are listed in pole_indices and carry the full-data
// prediction as a placeholder (callers reroute them to exact refits).
struct Predictions {
  Eigen::VectorXd values;
  std::vector<Eigen::Index> pole_indices;
};

// Newton-step prediction: z_n + (d1_n/N) q_n / (1 - (d2_n/N) q_n).
// The d2_n/N scaling in both the correction and the denominator is the one
// consistent with the 1/N-normalized Hessian; it is pinned by the
// one-step-Newton and Sherman-Morrison oracles in the test suite.
inline Predictions ns_predict(const FitState& fit, const QnSet& qn) {
  const Eigen::Index n = fit.z.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  Predictions out;
  out.values.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double denom = 1.0 - fit.d2[i] * inv_n * qn.q[i];
    if (std::abs(denom) < kPoleGuard) {
      out.values[i] = fit.z[i];
      out.pole_indices.push_back(i);
    } else {
      out.values[i] = fit.z[i] + inv_n * fit.d1[i] * qn.q[i] / denom;
    }
  }
  return out;
}

// Infinitesimal-jackknife prediction: z_n + (d1_n/N) q_n.
inline Eigen::VectorXd ij_predict(const FitState& fit, const QnSet& qn) {
  const double inv_n = 1.0 / static_cast<double>(fit.z.size());
  return fit.z + inv_n * fit.d1.cwiseProduct(qn.q);
}

struct ExactCvResult {
  std::vector<Eigen::Index> indices;
  Eigen::VectorXd predictions;  // x_n' theta_{-n}, aligned with indices
  Eigen::VectorXd errs;         // Err(prediction, y_n)
  double mean_err = 0;
};

// Exact leave-one-out refits over the requested indices (all rows when the
// subset is empty), warm-started at the full fit.
inline ExactCvResult exact_loocv(const Dataset& data, GlmFamily family, double lambda,
                                 ErrMetric metric, std::vector<Eigen::Index> subset = {},
                                 const FitState* warm = nullptr, double tol = 1e-12,
                                 int threads = 1, const SolverOptions& base = {}) {
  FitState local;
  if (warm == nullptr) {
    local = fit(data, family, lambda, base);
    warm = &local;
  }
  ExactCvResult out;
  if (subset.empty()) {
    subset.resize(data.n());
    std::iota(subset.begin(), subset.end(), Eigen::Index{0});
  }
  out.indices = std::move(subset);
  const Eigen::Index m = static_cast<Eigen::Index>(out.indices.size());
  out.predictions.resize(m);
  out.errs.resize(m);
  parallel_for(0, m, threads, [&](Eigen::Index j) {
    const Eigen::Index idx = out.indices[j];
    const Eigen::VectorXd theta = loo_fit(data, family, lambda, idx, *warm, tol, base);
    out.predictions[j] = data.row_dot(idx, theta);
    out.errs[j] = eval_err(metric, out.predictions[j], data.y()[idx]);
  });
  out.mean_err = m > 0 ? out.errs.mean() : 0.0;
  return out;
}

struct RestrictedProblem {
  Dataset data;            // N x R covariates (X V_R), same responses
  Eigen::MatrixXd basis;   // D x R right-singular basis V_R
};

// Projects the covariates onto the top-R right-singular subspace of X.
inline RestrictedProblem restrict_to_rank(const Dataset& data, Eigen::Index r) {
  if (r < 1 || r > std::min(data.n(), data.d())) {
    throw ConfigError("restrict_to_rank: R must be in [1, min(N, D)]");
  }
  const Eigen::MatrixXd x = data.dense_copy();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericalError("SVD failed in restrict_to_rank");
  // X V_R = U_R diag(S_R): cheaper and more accurate than the product X * V_R.
  const Eigen::MatrixXd xr =
      svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal();
  return {Dataset::from_dense(xr, data.y()), svd.matrixV().leftCols(r)};
}

}  // namespace lracv
