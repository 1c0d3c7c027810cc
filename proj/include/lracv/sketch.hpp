#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lracv/dataset.hpp"
#include "lracv/errors.hpp"
#include "lracv/exact.hpp"
#include "lracv/parallel.hpp"
#include "lracv/rng.hpp"
#include "lracv/solver.hpp"

namespace lracv {

// Rank-K eigenfactorization U diag(eigvals) U' of the randomized Nystrom
// approximation of B = (1/N) sum_n d2_n x_n x_n', together with an
// orthonormal basis of the agreement subspace H * range(Omega) on which the
// approximate and exact regularized Hessians coincide.
struct HessianSketch {
  Eigen::MatrixXd eigvecs;      // D x K orthonormal
  Eigen::VectorXd eigvals;      // length K, >= 0
  double lambda = 0;
  Eigen::MatrixXd agree_basis;  // D x K orthonormal
  int k = 0;
  std::uint64_t seed = 0;
  double nu = 0;  // stabilization shift actually used
};

namespace detail {

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, CounterRng& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = normal(rng);
  return m;
}

inline Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& m, bool* rank_deficient) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  const Eigen::VectorXd rdiag =
      qr.matrixQR().topLeftCorner(m.cols(), m.cols()).diagonal().cwiseAbs();
  const double top = rdiag.maxCoeff();
  *rank_deficient =
      top == 0.0 || rdiag.minCoeff() < top * 1e-12 * static_cast<double>(std::max(m.rows(), m.cols()));
  return qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), m.cols());
}

// Shifted Nystrom factorization from a cached product BO = B * Omega.
// On Cholesky failure the shift escalates x10, up to 3 retries.
inline void nystrom_from_product(const Eigen::MatrixXd& bo, const Eigen::MatrixXd& omega,
                                 double nu, Eigen::MatrixXd* u, Eigen::VectorXd* eigvals,
                                 double* nu_used) {
  if (!(nu > 0)) throw ConfigError("stable_nystrom: nu must be > 0");
  double nu_try = nu;
  for (int attempt = 0; attempt < 4; ++attempt) {
    const Eigen::MatrixXd g = bo + nu_try * omega;
    Eigen::MatrixXd c = omega.transpose() * g;
    c = 0.5 * (c + c.transpose()).eval();
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() != Eigen::Success) {
      nu_try *= 10.0;
      continue;
    }
    // E = G Gamma^{-T} so that E E' = G C^{-1} G'.
    const Eigen::MatrixXd e = llt.matrixL().solve(g.transpose()).transpose();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(e, Eigen::ComputeThinU);
    *u = svd.matrixU();
    *eigvals = (svd.singularValues().array().square() - nu_try).max(0.0).matrix();
    *nu_used = nu_try;
    return;
  }
  throw NumericalError("stable_nystrom: Cholesky failed after 3 shift escalations");
}

}  // namespace detail

// B applied to a block of vectors: (1/N) X' diag(d2) X M, never forming B.
struct BOperator {
  const Dataset* data;
  const Eigen::VectorXd* d2;

  Eigen::MatrixXd operator()(const Eigen::MatrixXd& m) const {
    Eigen::MatrixXd t = data->mul(m);
    t.array().colwise() *= d2->array();
    return data->tmul(t) / static_cast<double>(data->n());
  }
};

// Default stabilization shift: sqrt(D) * eps * trace(B)/D (with a tiny floor
// so that B = 0 still yields a positive shift).
inline double default_nu(const FitState& fit, const Dataset& data) {
  const double n = static_cast<double>(data.n());
  const double d = static_cast<double>(data.d());
  const double trace_b = fit.d2.dot(data.row_norms().cwiseAbs2()) / n;
  constexpr double eps = std::numeric_limits<double>::epsilon();
  return std::sqrt(d) * eps * std::max(trace_b / d, 1e-100);
}

// Optimized test matrix: orthonormal basis of diag(1/(B_dd + lambda)) X'X e
// with e a D x K standard-normal draw. `power` repeats the multiplication
// pass (default 1, the plain recipe). Rank deficiency triggers one re-draw
// with seed+1, then an error.
inline Eigen::MatrixXd build_omega(const Dataset& data, const FitState& fit, int k,
                                   std::uint64_t seed, int power = 1) {
  const Eigen::Index d = data.d();
  if (k < 1 || k > d) throw ConfigError("build_omega: K must be in [1, D]");
  if (power < 1) throw ConfigError("build_omega: power must be >= 1");
  const Eigen::VectorXd bdd =
      data.weighted_col_sq_sums(fit.d2) / static_cast<double>(data.n());
  const Eigen::VectorXd scale = (bdd.array() + fit.lambda).inverse().matrix();
  for (std::uint64_t attempt = 0; attempt < 2; ++attempt) {
    CounterRng rng(seed + attempt);
    Eigen::MatrixXd m = detail::gaussian_matrix(d, k, rng);
    for (int pass = 0; pass < power; ++pass) {
      m = scale.asDiagonal() * data.tmul(data.mul(m));
      if (pass + 1 < power) {
        bool deficient = false;
        m = detail::orthonormalize(m, &deficient);
        if (deficient) break;
      }
    }
    bool deficient = false;
    Eigen::MatrixXd q = detail::orthonormalize(m, &deficient);
    if (!deficient) return q;
  }
  throw NumericalError("build_omega: rank-deficient test matrix after re-draw");
}

struct NystromResult {
  Eigen::MatrixXd u;
  Eigen::VectorXd eigvals;
  double nu_used = 0;
};

// Numerically stable shifted Nystrom: G = B Omega + nu Omega; C = Omega' G;
// C = Gamma Gamma'; E = G Gamma^{-T}; E = U S V'; eigvals = max(S^2 - nu, 0).
template <class BApply>
NystromResult stable_nystrom(BApply&& b_apply, const Eigen::MatrixXd& omega, double nu) {
  NystromResult res;
  detail::nystrom_from_product(b_apply(omega), omega, nu, &res.u, &res.eigvals, &res.nu_used);
  return res;
}

// Orthonormal basis of H * range(Omega) = range(B Omega + lambda Omega).
template <class BApply>
Eigen::MatrixXd agreement_basis(BApply&& b_apply, const Eigen::MatrixXd& omega, double lambda) {
  bool deficient = false;
  Eigen::MatrixXd q = detail::orthonormalize(b_apply(omega) + lambda * omega, &deficient);
  if (deficient) throw NumericalError("agreement_basis: rank-deficient H * Omega");
  return q;
}

inline HessianSketch build_sketch(const Dataset& data, const FitState& fit, int k,
                                  std::uint64_t seed, std::optional<double> nu = std::nullopt,
                                  int power = 1) {
  const Eigen::MatrixXd omega = build_omega(data, fit, k, seed, power);
  const BOperator b{&data, &fit.d2};
  const Eigen::MatrixXd bo = b(omega);  // shared by the sketch and the agreement basis

  HessianSketch s;
  s.lambda = fit.lambda;
  s.k = k;
  s.seed = seed;
  detail::nystrom_from_product(bo, omega, nu.value_or(default_nu(fit, data)), &s.eigvecs,
                               &s.eigvals, &s.nu);
  bool deficient = false;
  s.agree_basis = detail::orthonormalize(bo + fit.lambda * omega, &deficient);
  if (deficient) throw NumericalError("build_sketch: rank-deficient H * Omega");
  return s;
}

// Sketched quadratic forms with certified error bounds:
//   qt_n = min{x_n' (U diag(eigvals) U' + lambda I)^{-1} x_n, cap_n}
//   eta_n = min{||P_perp x_n||^2 / lambda, cap_n}
// where P_perp projects off the agreement subspace and cap_n is the
// curvature-split cap. Cost is O(NDK) via the Woodbury identity.
inline QnSet qn_from_sketch(const HessianSketch& s, const Dataset& data, const FitState& fit,
                            int threads = 1) {
  const Eigen::Index n = data.n();
  const double lambda = s.lambda;
  const Eigen::VectorXd ratio =
      (s.eigvals.array() / (s.eigvals.array() + lambda)).matrix();

  QnSet out;
  out.q.resize(n);
  out.eta.resize(n);
  out.source = QnSource::sketch;
  const Eigen::VectorXd caps = qn_caps(fit, data);

  constexpr Eigen::Index kBlock = 1024;
  const Eigen::Index blocks = (n + kBlock - 1) / kBlock;
  parallel_for(0, blocks, threads, [&](Eigen::Index blk) {
    const Eigen::Index start = blk * kBlock;
    const Eigen::Index count = std::min<Eigen::Index>(kBlock, n - start);
    const Eigen::MatrixXd rows = data.rows_dense(start, count);
    const Eigen::MatrixXd w = rows * s.eigvecs;       // count x K
    const Eigen::MatrixXd wa = rows * s.agree_basis;  // count x K
    for (Eigen::Index i = 0; i < count; ++i) {
      const Eigen::Index idx = start + i;
      const double rn2 = data.row_norm_sq(idx);
      const double q_raw = (rn2 - w.row(i).cwiseAbs2().dot(ratio.transpose())) / lambda;
      const double proj = std::max(0.0, rn2 - wa.row(i).squaredNorm());
      out.q[idx] = std::clamp(q_raw, 0.0, caps[idx]);
      out.eta[idx] = std::min(proj / lambda, caps[idx]);
    }
  });
  return out;
}

// --- binary sketch container ------------------------------------------------

namespace detail {
inline constexpr char kSketchMagic[8] = {'L', 'R', 'S', 'K', 'E', 'T', 'C', 'H'};
inline constexpr std::uint32_t kSketchVersion = 1;

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::istream& in, T* v) {
  in.read(reinterpret_cast<char*>(v), sizeof(T));
}
}  // namespace detail

inline void save_sketch(const std::string& path, const HessianSketch& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(detail::kSketchMagic, sizeof(detail::kSketchMagic));
  detail::write_pod(out, detail::kSketchVersion);
  detail::write_pod(out, static_cast<std::uint64_t>(s.eigvecs.rows()));
  detail::write_pod(out, static_cast<std::uint64_t>(s.k));
  detail::write_pod(out, s.seed);
  detail::write_pod(out, s.lambda);
  detail::write_pod(out, s.nu);
  out.write(reinterpret_cast<const char*>(s.eigvals.data()),
            static_cast<std::streamsize>(sizeof(double) * s.eigvals.size()));
  out.write(reinterpret_cast<const char*>(s.eigvecs.data()),
            static_cast<std::streamsize>(sizeof(double) * s.eigvecs.size()));
  out.write(reinterpret_cast<const char*>(s.agree_basis.data()),
            static_cast<std::streamsize>(sizeof(double) * s.agree_basis.size()));
  if (!out.good()) throw IoError("short write to '" + path + "'");
}

inline HessianSketch load_sketch(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in.good() || !std::equal(magic, magic + 8, detail::kSketchMagic)) {
    throw IoError("'" + path + "' is not a sketch container");
  }
  std::uint32_t version = 0;
  detail::read_pod(in, &version);
  if (version != detail::kSketchVersion) {
    throw IoError("unsupported sketch container version " + std::to_string(version));
  }
  std::uint64_t d = 0, k = 0;
  HessianSketch s;
  detail::read_pod(in, &d);
  detail::read_pod(in, &k);
  detail::read_pod(in, &s.seed);
  detail::read_pod(in, &s.lambda);
  detail::read_pod(in, &s.nu);
  if (d == 0 || k == 0 || k > d || d > (1ull << 32)) {
    throw IoError("sketch container has implausible dimensions");
  }
  s.k = static_cast<int>(k);
  s.eigvals.resize(static_cast<Eigen::Index>(k));
  s.eigvecs.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
  s.agree_basis.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
  in.read(reinterpret_cast<char*>(s.eigvals.data()),
          static_cast<std::streamsize>(sizeof(double) * s.eigvals.size()));
  in.read(reinterpret_cast<char*>(s.eigvecs.data()),
          static_cast<std::streamsize>(sizeof(double) * s.eigvecs.size()));
  in.read(reinterpret_cast<char*>(s.agree_basis.data()),
          static_cast<std::streamsize>(sizeof(double) * s.agree_basis.size()));
  if (!in.good()) throw IoError("short read from '" + path + "'");
  if (!s.eigvals.allFinite() || !s.eigvecs.allFinite() || !s.agree_basis.allFinite()) {
    throw IoError("sketch container contains non-finite values");
  }
  return s;
}

// Doubling search for the smallest grid K (capped at D/4) whose probe-set
// certificate mean(eta_n |d1_n|) drops below 1% of the mean |prediction|.
struct AutoKResult {
  int k = 0;
  HessianSketch sketch;
  QnSet qn;
};

inline AutoKResult choose_k_auto(const Dataset& data, const FitState& fit, std::uint64_t seed,
                                 std::optional<double> nu = std::nullopt, int power = 1,
                                 int threads = 1) {
  const int cap = std::max(1, static_cast<int>(data.d() / 4));
  CounterRng probe_rng(seed, 0x70726f6265ULL);  // independent probe stream
  const auto probe = sample_without_replacement(data.n(), 10, probe_rng);
  const double inv_n = 1.0 / static_cast<double>(data.n());

  int k = std::min(8, cap);
  for (;;) {
    AutoKResult res;
    res.k = k;
    res.sketch = build_sketch(data, fit, k, seed, nu, power);
    res.qn = qn_from_sketch(res.sketch, data, fit, threads);
    double mean_pred = 0, mean_cert = 0;
    for (const auto idx : probe) {
      mean_pred += std::abs(fit.z[idx] + inv_n * fit.d1[idx] * res.qn.q[idx]);
      mean_cert += res.qn.eta[idx] * std::abs(fit.d1[idx]);
    }
    if (mean_cert <= 0.01 * mean_pred || k >= cap) return res;
    k = std::min(2 * k, cap);
  }
}

}  // namespace lracv
