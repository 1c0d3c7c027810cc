#pragma once

// Randomized property suites shared between the unit tests and the
// acceptance binary. Each suite runs at least `cases` randomized checks and
// returns human-readable descriptions of every violation (empty == pass).

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "lracv/bounds.hpp"
#include "lracv/exact.hpp"
#include "lracv/glm.hpp"
#include "lracv/rng.hpp"
#include "lracv/sketch.hpp"
#include "lracv/solver.hpp"
#include "support/oracles.hpp"

namespace properties {

using lracv::Dataset;
using lracv::FitState;
using lracv::GlmFamily;

inline std::string fmt(const char* pattern, double a, double b, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), pattern, a, b, c);
  return std::string(buf);
}

// d1, d2, d3 agree with central finite differences of f, d1, d2.
inline std::vector<std::string> derivative_fd_suite(int cases = 200, std::uint64_t seed = 11) {
  std::vector<std::string> fails;
  lracv::CounterRng rng(seed, 0x6664ULL);
  std::uniform_real_distribution<double> zdist(-5.0, 5.0);
  std::uniform_int_distribution<int> famdist(0, 2);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> count(0, 20);
  const double h = 1e-5;
  for (int c = 0; c < cases; ++c) {
    const auto family = static_cast<GlmFamily>(famdist(rng));
    const double z = zdist(rng);
    double y = 0;
    switch (family) {
      case GlmFamily::logistic: y = coin(rng) ? 1.0 : -1.0; break;
      case GlmFamily::poisson: y = static_cast<double>(count(rng)); break;
      case GlmFamily::gaussian: y = zdist(rng); break;
    }
    const auto at = [&](double zz) { return lracv::eval_derivatives(family, zz, y); };
    const auto mid = at(z);
    const double fd1 = (at(z + h).f - at(z - h).f) / (2 * h);
    const double fd2 = (at(z + h).d1 - at(z - h).d1) / (2 * h);
    const double fd3 = (at(z + h).d2 - at(z - h).d2) / (2 * h);
    const auto bad = [&](double got, double want) {
      return std::abs(got - want) > 1e-6 * std::max(1.0, std::abs(want));
    };
    if (bad(mid.d1, fd1)) fails.push_back(fmt("d1 %.6e vs fd %.6e at z=%.3f", mid.d1, fd1, z));
    if (bad(mid.d2, fd2)) fails.push_back(fmt("d2 %.6e vs fd %.6e at z=%.3f", mid.d2, fd2, z));
    if (bad(mid.d3, fd3)) fails.push_back(fmt("d3 %.6e vs fd %.6e at z=%.3f", mid.d3, fd3, z));
    if (mid.d2 < 0) fails.push_back(fmt("negative d2 %.6e at z=%.3f", mid.d2, z, 0));
  }
  return fails;
}

// Exact quadratic forms are nonnegative, capped by the curvature-split
// ceiling, and match the dense-inverse oracle.
inline std::vector<std::string> qn_bounds_suite(int min_cases = 200, std::uint64_t seed = 12) {
  std::vector<std::string> fails;
  int done = 0;
  std::uint64_t instance = 0;
  while (done < min_cases) {
    const auto family = static_cast<GlmFamily>(instance % 3);
    const Eigen::Index n = 50 + static_cast<Eigen::Index>(instance % 4) * 10;
    const Eigen::Index d = 5 + static_cast<Eigen::Index>(instance % 5);
    const Dataset data = oracles::random_instance(family, n, d, seed + instance);
    const FitState fs = lracv::fit(data, family, 0.7, {1e-12});
    const lracv::QnSet qn = lracv::exact_qn(fs, data);
    const Eigen::VectorXd caps = lracv::qn_caps(fs, data);
    const Eigen::VectorXd oracle = oracles::dense_qn_oracle(fs, data, family);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(qn.q[i] >= 0))
        fails.push_back(fmt("q[%0.f] = %.6e negative", static_cast<double>(i), qn.q[i]));
      if (qn.q[i] > caps[i] * (1 + 1e-12) + 1e-15)
        fails.push_back(fmt("q %.6e above cap %.6e", qn.q[i], caps[i]));
      const double ref = std::min(oracle[i], caps[i]);
      if (std::abs(qn.q[i] - ref) > 1e-9 * std::max(1.0, std::abs(ref)))
        fails.push_back(fmt("q %.17g vs dense oracle %.17g", qn.q[i], ref));
      if (qn.eta[i] != 0.0)
        fails.push_back(fmt("exact source eta %.6e != 0", qn.eta[i], 0));
    }
    done += static_cast<int>(n);
    ++instance;
  }
  return fails;
}

// The grid-estimated curvature variation along the actual fit segment never
// exceeds the closed-form envelope constant M_n.
inline std::vector<std::string> ln_le_mn_suite(int cases = 200, std::uint64_t seed = 13) {
  std::vector<std::string> fails;
  int done = 0;
  std::uint64_t instance = 0;
  while (done < cases) {
    const auto family = static_cast<GlmFamily>(instance % 3);
    const Dataset data = oracles::random_instance(family, 30, 5, seed + instance, 0.8);
    const FitState fs = lracv::fit(data, family, 0.9, {1e-12});
    for (Eigen::Index n = 0; n < std::min<Eigen::Index>(20, data.n()); ++n) {
      const Eigen::VectorXd theta_loo = lracv::loo_fit(data, family, 0.9, n, fs, 1e-12);
      const double ln = oracles::ln_oracle(fs, data, family, n, theta_loo);
      const double mn = lracv::mn_bound(fs, data, family, n);
      if (ln > mn * (1 + 1e-12) + 1e-15)
        fails.push_back(fmt("L_n %.6e exceeds M_n %.6e", ln, mn));
      ++done;
    }
    ++instance;
  }
  return fails;
}

// The agreement basis is orthonormal and its projector is idempotent.
inline std::vector<std::string> projector_idempotence_suite(int cases = 200,
                                                            std::uint64_t seed = 14) {
  std::vector<std::string> fails;
  int done = 0;
  std::uint64_t instance = 0;
  std::normal_distribution<double> normal;
  while (done < cases) {
    const auto family = static_cast<GlmFamily>(instance % 3);
    const Eigen::Index d = 24 + static_cast<Eigen::Index>(instance % 3) * 8;
    const Dataset data = oracles::random_instance(family, 80, d, seed + instance, 0.5);
    const FitState fs = lracv::fit(data, family, 0.6, {1e-10});
    const auto sketch =
        lracv::build_sketch(data, fs, 4 + static_cast<Eigen::Index>(instance % 2) * 4,
                            seed + 1000 + instance);
    const Eigen::MatrixXd& a = sketch.agree_basis;
    const double gram_err =
        (a.transpose() * a - Eigen::MatrixXd::Identity(a.cols(), a.cols())).cwiseAbs().maxCoeff();
    if (gram_err > 1e-12)
      fails.push_back(fmt("basis gram deviates from identity by %.3e", gram_err, 0));
    lracv::CounterRng rng(seed + 2000 + instance, 0x76656373ULL);
    for (int v = 0; v < 40; ++v, ++done) {
      Eigen::VectorXd vec(a.rows());
      for (Eigen::Index j = 0; j < vec.size(); ++j) vec[j] = normal(rng);
      const Eigen::VectorXd pv = a * (a.transpose() * vec);
      const Eigen::VectorXd ppv = a * (a.transpose() * pv);
      if ((ppv - pv).norm() > 1e-10 * std::max(1.0, vec.norm()))
        fails.push_back(fmt("projector not idempotent: drift %.3e", (ppv - pv).norm(), 0));
    }
    ++instance;
  }
  return fails;
}

// Leave-one-out refits move the parameter by at most |d1_n| ||x_n|| /
// (N lambda), up to the measured optimizer residuals.
inline std::vector<std::string> loo_shift_suite(int cases = 200, std::uint64_t seed = 15) {
  std::vector<std::string> fails;
  int done = 0;
  std::uint64_t instance = 0;
  while (done < cases) {
    const auto family = static_cast<GlmFamily>(instance % 3);
    const double lambda = 0.5 + 0.25 * static_cast<double>(instance % 3);
    const Dataset data = oracles::random_instance(family, 40, 6, seed + instance, 0.9);
    const FitState fs = lracv::fit(data, family, lambda, {1e-12});
    for (Eigen::Index n = 0; n < std::min<Eigen::Index>(20, data.n()); ++n, ++done) {
      const Eigen::VectorXd theta_loo = lracv::loo_fit(data, family, lambda, n, fs, 1e-12);
      const double shift = (fs.theta_hat - theta_loo).norm();
      const double loo_grad =
          oracles::dense_gradient(data, family, theta_loo, lambda, n).norm();
      const double allowed = std::abs(fs.d1[n]) * data.row_norm(n) /
                                 (static_cast<double>(data.n()) * lambda) +
                             (fs.grad_norm + loo_grad) / lambda + 1e-13;
      if (shift > allowed)
        fails.push_back(fmt("parameter shift %.6e exceeds bound %.6e", shift, allowed));
    }
    ++instance;
  }
  return fails;
}

}  // namespace properties
