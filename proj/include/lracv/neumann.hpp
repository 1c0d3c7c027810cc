#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cstdint>
#include <vector>

#include "lracv/dataset.hpp"
#include "lracv/errors.hpp"
#include "lracv/exact.hpp"
#include "lracv/rng.hpp"
#include "lracv/solver.hpp"

namespace lracv {

struct NeumannConfig {
  int s = 10;  // recursion depth
  int m = 1;   // averaged repetitions
  std::uint64_t seed = 0;
};

struct NeumannResult {
  QnSet qn;
  bool divergent = false;
};

namespace detail {

// One repetition of the stochastic Neumann recursion applied to all targets
// at once: P holds Hbar_s^{-1} x_n as columns, and each step draws a row s
// and applies Hbar_s^{-1} = I + (I - A_s) Hbar_{s-1}^{-1} with
// A_s = d2_s x_s x_s' + (lambda/N) I. Returns false on divergence.
inline bool neumann_steps(const FitState& fit, const Eigen::MatrixXd& x0, CounterRng& rng,
                          int steps, Eigen::MatrixXd& p) {
  const Eigen::Index n = x0.cols();
  const double lam_over_n = fit.lambda / static_cast<double>(n);
  for (int step = 0; step < steps; ++step) {
    const Eigen::Index s_idx = static_cast<Eigen::Index>(uniform_below(rng, n));
    const Eigen::RowVectorXd u = x0.col(s_idx).transpose() * p;  // x_s' P before update
    p *= (1.0 - lam_over_n);
    p += x0;
    p.noalias() -= (fit.d2[s_idx] * x0.col(s_idx)) * u;
    if ((step & 15) == 15 && !p.allFinite()) return false;
  }
  return p.allFinite();
}

inline Eigen::VectorXd quadratic_forms(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& p) {
  return (x0.cwiseProduct(p)).colwise().sum().transpose();
}

inline void clip_to_caps(const FitState& fit, const Dataset& data, Eigen::VectorXd& q) {
  const Eigen::VectorXd caps = qn_caps(fit, data);
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    if (std::isfinite(q[i])) q[i] = std::clamp(q[i], 0.0, caps[i]);
  }
}

}  // namespace detail

// Uncertified quadratic-form estimates from the stochastic Neumann series
// (eta is the +inf sentinel). Repetition r draws from seed+r; the averaged
// estimates are clipped into [0, cap]. Divergence (non-finite intermediates)
// is flagged, with the estimates reported as-is.
inline NeumannResult neumann_qn(const FitState& fit, const Dataset& data,
                                const NeumannConfig& cfg) {
  if (cfg.s < 1 || cfg.m < 1) throw ConfigError("neumann_qn: S and M must be >= 1");
  const Eigen::Index n = data.n();
  const Eigen::MatrixXd x0 = data.dense_copy().transpose();  // columns are x_n
  Eigen::VectorXd qacc = Eigen::VectorXd::Zero(n);
  bool ok = true;
  for (int rep = 0; rep < cfg.m; ++rep) {
    CounterRng rng(cfg.seed + static_cast<std::uint64_t>(rep));
    Eigen::MatrixXd p = x0;
    ok = detail::neumann_steps(fit, x0, rng, cfg.s, p) && ok;
    qacc += detail::quadratic_forms(x0, p);
  }
  NeumannResult out;
  out.divergent = !ok;
  out.qn.q = qacc / static_cast<double>(cfg.m);
  detail::clip_to_caps(fit, data, out.qn.q);
  out.qn.eta = Eigen::VectorXd::Constant(n, kInf);
  out.qn.source = QnSource::neumann;
  return out;
}

struct NeumannSweepPoint {
  int s = 0;
  int m = 0;
  double seconds = 0;  // measured wall time of the (s, m) configuration
  Eigen::VectorXd q;   // averaged over the first m repetitions, clipped
  bool divergent = false;
};

// Benchmark sweep over a grid of recursion depths and repetition counts.
// Each repetition is run once to max(s_grid) steps with snapshots at every
// grid depth; because the per-step draws are sequential within a repetition,
// the snapshot at depth s is bitwise-identical to an independent run with
// S = s. Snapshot timings exclude the cost of earlier snapshots, so
// seconds(s, m) is the wall time a standalone (s, m) run would measure.
inline std::vector<NeumannSweepPoint> neumann_sweep(const FitState& fit, const Dataset& data,
                                                    std::vector<int> s_grid,
                                                    std::vector<int> m_grid,
                                                    std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  std::sort(s_grid.begin(), s_grid.end());
  s_grid.erase(std::unique(s_grid.begin(), s_grid.end()), s_grid.end());
  std::sort(m_grid.begin(), m_grid.end());
  m_grid.erase(std::unique(m_grid.begin(), m_grid.end()), m_grid.end());
  if (s_grid.empty() || m_grid.empty() || s_grid.front() < 1 || m_grid.front() < 1) {
    throw ConfigError("neumann_sweep: grids must be non-empty with entries >= 1");
  }
  const int max_s = s_grid.back();
  const int max_m = m_grid.back();
  const Eigen::Index n = data.n();
  const Eigen::MatrixXd x0 = data.dense_copy().transpose();

  const std::size_t ns = s_grid.size();
  std::vector<std::vector<Eigen::VectorXd>> snap_q(static_cast<std::size_t>(max_m),
                                                   std::vector<Eigen::VectorXd>(ns));
  std::vector<std::vector<double>> snap_t(static_cast<std::size_t>(max_m),
                                          std::vector<double>(ns, 0.0));
  std::vector<std::vector<bool>> snap_ok(static_cast<std::size_t>(max_m),
                                         std::vector<bool>(ns, true));

  for (int rep = 0; rep < max_m; ++rep) {
    CounterRng rng(seed + static_cast<std::uint64_t>(rep));
    Eigen::MatrixXd p = x0;
    bool ok = true;
    double prior_snapshot_cost = 0;
    const auto t0 = clock::now();
    int done = 0;
    for (std::size_t gi = 0; gi < ns; ++gi) {
      const int target = s_grid[gi];
      if (ok) ok = detail::neumann_steps(fit, x0, rng, target - done, p);
      done = target;
      const auto tq0 = clock::now();
      snap_q[rep][gi] = detail::quadratic_forms(x0, p);
      const auto tq1 = clock::now();
      snap_t[rep][gi] =
          std::chrono::duration<double>(tq1 - t0).count() - prior_snapshot_cost;
      prior_snapshot_cost += std::chrono::duration<double>(tq1 - tq0).count();
      snap_ok[rep][gi] = ok;
    }
  }

  std::vector<NeumannSweepPoint> out;
  out.reserve(ns * m_grid.size());
  for (const int m : m_grid) {
    for (std::size_t gi = 0; gi < ns; ++gi) {
      NeumannSweepPoint pt;
      pt.s = s_grid[gi];
      pt.m = m;
      Eigen::VectorXd qacc = Eigen::VectorXd::Zero(n);
      for (int rep = 0; rep < m; ++rep) {
        qacc += snap_q[rep][gi];
        pt.seconds += snap_t[rep][gi];
        pt.divergent = pt.divergent || !snap_ok[rep][gi];
      }
      pt.q = qacc / static_cast<double>(m);
      detail::clip_to_caps(fit, data, pt.q);
      out.push_back(std::move(pt));
    }
  }
  return out;
}

}  // namespace lracv
