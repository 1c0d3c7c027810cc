#include <catch2/catch_amalgamated.hpp>
#include <Eigen/Dense>
#include <cmath>

#include "lracv/dataset.hpp"
#include "lracv/errors.hpp"
#include "lracv/neumann.hpp"
#include "lracv/solver.hpp"
#include "support/oracles.hpp"

using lracv::Dataset;
using lracv::FitState;
using lracv::GlmFamily;
using lracv::NeumannConfig;

namespace {

FitState manual_fit(Eigen::VectorXd z, Eigen::VectorXd d1, Eigen::VectorXd d2, double lambda) {
  FitState fs;
  fs.lambda = lambda;
  fs.z = std::move(z);
  fs.d1 = std::move(d1);
  fs.d2 = std::move(d2);
  return fs;
}

Dataset scalar_dataset(double x) {
  Eigen::MatrixXd m(1, 1);
  m << x;
  Eigen::VectorXd y(1);
  y << 0.0;
  return Dataset::from_dense(m, y);
}

}  // namespace

TEST_CASE("one-step recursion matches the closed form 2I - A", "[neumann]") {
  // Single row, one step: Hbar_1^{-1} = I + (I - A_1) = 2I - A_1 with
  // A_1 = d2 x x' + lambda I, so q = x'(2 - lambda - d2 x^2) x.
  const Dataset data = scalar_dataset(1.0);
  const FitState fs = manual_fit(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1),
                                 Eigen::VectorXd::Constant(1, 0.5), 0.25);
  const auto res = lracv::neumann_qn(fs, data, {1, 1, 42});
  CHECK_FALSE(res.divergent);
  CHECK(res.qn.q[0] == 1.25);  // 2 - 0.25 - 0.5, exactly representable
  CHECK(res.qn.eta[0] == lracv::kInf);
  CHECK(res.qn.source == lracv::QnSource::neumann);
}

TEST_CASE("a stationary configuration is a fixed point at every depth", "[neumann]") {
  // A_s = I exactly (d2 x^2 + lambda = 1 with one row), so the recursion
  // never moves and the estimate is ||x||^2 at any (S, M).
  const Dataset data = scalar_dataset(1.0);
  const FitState fs = manual_fit(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1),
                                 Eigen::VectorXd::Constant(1, 0.5), 0.5);
  for (int s : {1, 7, 40}) {
    for (int m : {1, 3}) {
      const auto res = lracv::neumann_qn(fs, data, {s, m, 7});
      CHECK_FALSE(res.divergent);
      CHECK(res.qn.q[0] == 1.0);
    }
  }
}

TEST_CASE("oscillating but finite estimates are clipped into the cap range", "[neumann]") {
  // A = 3.5: the recursion alternates with ratio -2.5 and blows up while
  // staying finite at small depth; the clip returns the cap.
  const Dataset data = scalar_dataset(1.0);
  const FitState fs = manual_fit(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1),
                                 Eigen::VectorXd::Constant(1, 3.0), 0.5);
  const auto res = lracv::neumann_qn(fs, data, {16, 1, 3});
  CHECK_FALSE(res.divergent);
  const double cap = 1.0 / (0.5 + 3.0);
  CHECK(res.qn.q[0] == cap);
}

TEST_CASE("overflow flips the divergence flag", "[neumann]") {
  const Dataset data = scalar_dataset(1.0);
  const FitState fs = manual_fit(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1),
                                 Eigen::VectorXd::Constant(1, 3.0), 0.5);
  const auto res = lracv::neumann_qn(fs, data, {800, 1, 3});
  CHECK(res.divergent);
}

TEST_CASE("estimates converge to the dense oracle on a well-conditioned instance",
          "[neumann]") {
  // lambda ~ 0 removes the per-step regularizer bias; rows scaled so the
  // stochastic recursion is a stable contraction on average.
  const Dataset data = oracles::random_instance(GlmFamily::gaussian, 80, 6, 81, 0.3);
  FitState fs;
  fs.lambda = 1e-6;
  fs.theta_hat = Eigen::VectorXd::Zero(6);
  fs.z = Eigen::VectorXd::Zero(80);
  fs.d1 = Eigen::VectorXd::Zero(80);
  fs.d2 = Eigen::VectorXd::Ones(80);
  const Eigen::VectorXd oracle = oracles::dense_qn_oracle(fs, data, GlmFamily::gaussian);
  const auto res = lracv::neumann_qn(fs, data, {400, 2000, 5});
  REQUIRE_FALSE(res.divergent);
  double worst = 0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    worst = std::max(worst, std::abs(res.qn.q[i] - oracle[i]) / oracle[i]);
  }
  CHECK(worst <= 0.05);
}

TEST_CASE("config validation", "[neumann]") {
  const Dataset data = scalar_dataset(1.0);
  const FitState fs = manual_fit(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1),
                                 Eigen::VectorXd::Ones(1), 1.0);
  CHECK_THROWS_AS(lracv::neumann_qn(fs, data, {0, 1, 0}), lracv::ConfigError);
  CHECK_THROWS_AS(lracv::neumann_qn(fs, data, {1, 0, 0}), lracv::ConfigError);
  CHECK_THROWS_AS(lracv::neumann_sweep(fs, data, {}, {1}, 0), lracv::ConfigError);
  CHECK_THROWS_AS(lracv::neumann_sweep(fs, data, {0}, {1}, 0), lracv::ConfigError);
}

TEST_CASE("sweep snapshots equal standalone runs bitwise", "[neumann]") {
  const Dataset data = oracles::random_instance(GlmFamily::poisson, 40, 5, 82, 0.5);
  const FitState fs = lracv::fit(data, GlmFamily::poisson, 1.0, {1e-10});
  const auto sweep = lracv::neumann_sweep(fs, data, {3, 7}, {1, 2}, 99);
  REQUIRE(sweep.size() == 4);
  for (const auto& pt : sweep) {
    const auto standalone = lracv::neumann_qn(fs, data, {pt.s, pt.m, 99});
    CHECK((pt.q.array() == standalone.qn.q.array()).all());
    CHECK(pt.divergent == standalone.divergent);
    CHECK(pt.seconds >= 0.0);
  }
}

TEST_CASE("reference oracles enforce their own size guards", "[oracles]") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(1, 2001);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(1);
  const Dataset data = Dataset::from_dense(x, y);
  FitState fs;
  fs.lambda = 1.0;
  fs.theta_hat = Eigen::VectorXd::Zero(2001);
  fs.z = Eigen::VectorXd::Zero(1);
  fs.d1 = Eigen::VectorXd::Zero(1);
  fs.d2 = Eigen::VectorXd::Zero(1);
  CHECK_THROWS_AS(oracles::dense_qn_oracle(fs, data, GlmFamily::gaussian), std::runtime_error);
  CHECK_THROWS_AS(oracles::newton_step_oracle(fs, data, GlmFamily::gaussian, 0),
                  std::runtime_error);
}

TEST_CASE("oracle cross-check: explicit ridge and one-step references agree",
          "[oracles]") {
  // The two independent oracles must agree with each other on a quadratic
  // objective, where one Newton step from any point reaches the minimizer.
  const Dataset data = oracles::random_instance(GlmFamily::gaussian, 30, 4, 83);
  const FitState fs = lracv::fit(data, GlmFamily::gaussian, 0.8, {1e-12});
  for (Eigen::Index n = 0; n < 10; ++n) {
    const double a = oracles::newton_step_oracle(fs, data, GlmFamily::gaussian, n);
    const double b = oracles::ridge_loo_prediction(data, 0.8, n);
    CHECK(a == Catch::Approx(b).margin(1e-9));
  }
}
