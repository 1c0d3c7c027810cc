#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lracv/dataset.hpp"
#include "lracv/errors.hpp"
#include "lracv/glm.hpp"
#include "lracv/rng.hpp"

namespace lracv {

// Approximately-low-rank synthetic recipe: x_{nd} ~ N(0,1) for d < rank and
// N(0, tail_std^2) beyond it (tail_std = 0 gives exactly-low-rank data),
// theta* ~ N(0,1), responses drawn from the family at mean link(x' theta*).
struct SyntheticSpec {
  GlmFamily family = GlmFamily::poisson;
  Eigen::Index n = 0;
  Eigen::Index d = 0;
  Eigen::Index rank = 0;
  double tail_std = 0;
  std::uint64_t theta_seed = 1;
  std::uint64_t data_seed = 2;
  bool rotate = false;  // apply a random orthogonal rotation (default: axis-aligned)
};

struct SyntheticData {
  Dataset data;
  Eigen::VectorXd theta_star;
};

// Guards exp(x' theta*) in the Poisson response draw; rows whose linear
// predictor exceeds this are redrawn.
inline constexpr double kPoissonOverflowGuard = 30.0;

inline SyntheticData gen_synthetic(const SyntheticSpec& spec,
                                   std::optional<Eigen::VectorXd> theta_star = std::nullopt) {
  if (spec.n < 1 || spec.d < 1) throw ConfigError("gen_synthetic: need N >= 1 and D >= 1");
  if (spec.rank < 1 || spec.rank > spec.d) {
    throw ConfigError("gen_synthetic: rank must be in [1, D]");
  }
  if (!(spec.tail_std >= 0)) throw ConfigError("gen_synthetic: tail_std must be >= 0");

  std::normal_distribution<double> normal;
  Eigen::VectorXd theta;
  if (theta_star) {
    theta = std::move(*theta_star);
    if (theta.size() != spec.d) throw ConfigError("gen_synthetic: theta_star has wrong length");
  } else {
    CounterRng theta_rng(spec.theta_seed, 0x7468657461ULL);
    theta.resize(spec.d);
    for (Eigen::Index j = 0; j < spec.d; ++j) theta[j] = normal(theta_rng);
  }

  CounterRng xrng(spec.data_seed, 0x636f76ULL);
  CounterRng yrng(spec.data_seed, 0x726573ULL);
  Eigen::MatrixXd x(spec.n, spec.d);
  Eigen::VectorXd y(spec.n);

  auto draw_row = [&](Eigen::Index i) {
    for (Eigen::Index j = 0; j < spec.rank; ++j) x(i, j) = normal(xrng);
    if (spec.tail_std > 0) {
      for (Eigen::Index j = spec.rank; j < spec.d; ++j) x(i, j) = spec.tail_std * normal(xrng);
    } else if (spec.rank < spec.d) {
      x.row(i).tail(spec.d - spec.rank).setZero();
    }
  };

  for (Eigen::Index i = 0; i < spec.n; ++i) {
    draw_row(i);
    double z = x.row(i).dot(theta);
    if (spec.family == GlmFamily::poisson) {
      int tries = 0;
      while (z > kPoissonOverflowGuard) {
        if (++tries > 100) {
          throw DataError("gen_synthetic: Poisson mean overflow at row " + std::to_string(i) +
                          " persists after 100 redraws");
        }
        draw_row(i);
        z = x.row(i).dot(theta);
      }
      std::poisson_distribution<long long> pois(std::exp(z));
      y[i] = static_cast<double>(pois(yrng));
    } else if (spec.family == GlmFamily::logistic) {
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      y[i] = unif(yrng) < sigmoid(z) ? 1.0 : -1.0;
    } else {
      y[i] = z + normal(yrng);
    }
  }

  if (spec.rotate) {
    CounterRng rot_rng(spec.data_seed, 0x726f74ULL);
    Eigen::MatrixXd g(spec.d, spec.d);
    for (Eigen::Index c = 0; c < spec.d; ++c)
      for (Eigen::Index r = 0; r < spec.d; ++r) g(r, c) = normal(rot_rng);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd q = qr.householderQ();
    x = x * q.transpose();   // rows become Q x_n
    theta = q * theta;       // keeps z_n = x_n' theta* invariant
  }

  return {Dataset::from_dense(std::move(x), std::move(y)), std::move(theta)};
}

// --- file formats -------------------------------------------------------------

namespace detail {

inline double parse_double(const char*& p, const std::string& path, std::size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(p, &end);
  if (end == p) {
    throw DataError(path + ":" + std::to_string(line_no) + ": expected a number");
  }
  p = end;
  return v;
}

inline void format_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace detail

// Sparse `label idx:val ...` format with 1-based feature indices. For the
// logistic family, {0,1} labels are mapped to {-1,+1}. `min_dims` can raise
// the column count above the largest index seen.
inline Dataset load_libsvm(const std::string& path,
                           std::optional<GlmFamily> family = std::nullopt,
                           Eigen::Index min_dims = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<Eigen::Triplet<double>> triplets;
  std::vector<double> labels;
  Eigen::Index max_col = -1;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const char* p = line.c_str();
    while (*p == ' ' || *p == '\t') ++p;
    if (*p == '\0') continue;
    const double label = detail::parse_double(p, path, line_no);
    const Eigen::Index row = static_cast<Eigen::Index>(labels.size());
    labels.push_back(label);
    for (;;) {
      while (*p == ' ' || *p == '\t') ++p;
      if (*p == '\0' || *p == '\r') break;
      char* end = nullptr;
      const long idx = std::strtol(p, &end, 10);
      if (end == p || *end != ':' || idx < 1) {
        throw DataError(path + ":" + std::to_string(line_no) + ": malformed index:value pair");
      }
      p = end + 1;
      const double val = detail::parse_double(p, path, line_no);
      const Eigen::Index col = static_cast<Eigen::Index>(idx - 1);
      max_col = std::max(max_col, col);
      triplets.emplace_back(static_cast<int>(row), static_cast<int>(col), val);
    }
  }
  if (labels.empty()) throw DataError(path + ": no data rows");
  const Eigen::Index n = static_cast<Eigen::Index>(labels.size());
  const Eigen::Index d = std::max(max_col + 1, std::max<Eigen::Index>(min_dims, 1));
  Dataset::SpMat x(n, d);
  x.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(labels.data(), n);
  if (family && *family == GlmFamily::logistic) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (y[i] == 0.0) y[i] = -1.0;
    }
  }
  return Dataset::from_sparse(std::move(x), std::move(y));
}

// Writes the stored nonzero entries; a load round-trips values bitwise.
inline void save_libsvm(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  std::string line;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    line.clear();
    detail::format_double(line, data.y()[i]);
    data.for_each_in_row(i, [&](Eigen::Index col, double val) {
      line += ' ';
      line += std::to_string(col + 1);
      line += ':';
      detail::format_double(line, val);
    });
    line += '\n';
    out << line;
  }
  if (!out.good()) throw IoError("short write to '" + path + "'");
}

// Dense CSV with a header row; `label_column` selects the response column,
// all remaining columns become features in order.
inline Dataset load_csv(const std::string& path, Eigen::Index label_column,
                        std::optional<GlmFamily> family = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": missing header row");
  const auto count_cells = [](const std::string& s) {
    return static_cast<Eigen::Index>(std::count(s.begin(), s.end(), ',')) + 1;
  };
  const Eigen::Index cols = count_cells(line);
  if (label_column < 0 || label_column >= cols) {
    throw ConfigError("load_csv: label column " + std::to_string(label_column) +
                      " out of range for " + std::to_string(cols) + " columns");
  }
  std::vector<double> values;
  std::vector<double> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const char* p = line.c_str();
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double v = detail::parse_double(p, path, line_no);
      if (c == label_column) {
        labels.push_back(v);
      } else {
        values.push_back(v);
      }
      while (*p == ' ') ++p;
      if (c + 1 < cols) {
        if (*p != ',') {
          throw DataError(path + ":" + std::to_string(line_no) + ": expected ',' after column " +
                          std::to_string(c));
        }
        ++p;
      }
    }
  }
  if (labels.empty()) throw DataError(path + ": no data rows");
  const Eigen::Index n = static_cast<Eigen::Index>(labels.size());
  const Eigen::Index d = cols - 1;
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = values[static_cast<std::size_t>(i * d + j)];
  }
  Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(labels.data(), n);
  if (family && *family == GlmFamily::logistic) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (y[i] == 0.0) y[i] = -1.0;
    }
  }
  return Dataset::from_dense(std::move(x), std::move(y));
}

// --- preprocessing -------------------------------------------------------------

// Keeps the d_keep columns with the most nonzero entries (ties by lower
// index), preserving the original column order among the kept ones.
inline Dataset select_dense_features(const Dataset& data, Eigen::Index d_keep) {
  if (d_keep < 1 || d_keep > data.d()) {
    throw ConfigError("select_dense_features: D_keep must be in [1, D]");
  }
  std::vector<std::int64_t> counts(static_cast<std::size_t>(data.d()), 0);
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    data.for_each_in_row(i, [&](Eigen::Index col, double) { ++counts[col]; });
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.d()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return a < b;
  });
  std::vector<Eigen::Index> kept(order.begin(), order.begin() + d_keep);
  std::sort(kept.begin(), kept.end());

  std::vector<Eigen::Index> col_map(static_cast<std::size_t>(data.d()), -1);
  for (Eigen::Index j = 0; j < d_keep; ++j) col_map[kept[static_cast<std::size_t>(j)]] = j;

  if (!data.is_sparse()) {
    Eigen::MatrixXd x(data.n(), d_keep);
    for (Eigen::Index j = 0; j < d_keep; ++j) {
      x.col(j) = data.dense().col(kept[static_cast<std::size_t>(j)]);
    }
    return Dataset::from_dense(std::move(x), data.y());
  }
  std::vector<Eigen::Triplet<double>> triplets;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    data.for_each_in_row(i, [&](Eigen::Index col, double val) {
      if (col_map[col] >= 0) {
        triplets.emplace_back(static_cast<int>(i), static_cast<int>(col_map[col]), val);
      }
    });
  }
  Dataset::SpMat x(data.n(), d_keep);
  x.setFromTriplets(triplets.begin(), triplets.end());
  return Dataset::from_sparse(std::move(x), data.y());
}

// Uniform subsample of n_keep rows without replacement, ascending order.
inline Dataset subsample_rows(const Dataset& data, Eigen::Index n_keep, std::uint64_t seed) {
  if (n_keep < 1 || n_keep > data.n()) {
    throw ConfigError("subsample_rows: N_keep must be in [1, N]");
  }
  CounterRng rng(seed, 0x726f7773ULL);
  const auto rows = sample_without_replacement(data.n(), n_keep, rng);
  Eigen::VectorXd y(n_keep);
  for (Eigen::Index i = 0; i < n_keep; ++i) y[i] = data.y()[rows[static_cast<std::size_t>(i)]];
  if (!data.is_sparse()) {
    Eigen::MatrixXd x(n_keep, data.d());
    for (Eigen::Index i = 0; i < n_keep; ++i) {
      x.row(i) = data.dense().row(rows[static_cast<std::size_t>(i)]);
    }
    return Dataset::from_dense(std::move(x), std::move(y));
  }
  std::vector<Eigen::Triplet<double>> triplets;
  for (Eigen::Index i = 0; i < n_keep; ++i) {
    data.for_each_in_row(rows[static_cast<std::size_t>(i)], [&](Eigen::Index col, double val) {
      triplets.emplace_back(static_cast<int>(i), static_cast<int>(col), val);
    });
  }
  Dataset::SpMat x(n_keep, data.d());
  x.setFromTriplets(triplets.begin(), triplets.end());
  return Dataset::from_sparse(std::move(x), std::move(y));
}

// Pairwise-product expansion: generates columns x_{d1} x_{d2} (d1 <= d2),
// keeps the d_keep most-populated products, then appends the original
// columns. The candidate count pass streams over rows, guarded by a
// D <= 2048 limit on the D^2 intermediate.
inline Dataset pairwise_expand(const Dataset& data, Eigen::Index d_keep) {
  const Eigen::Index d = data.d();
  if (d > 2048) {
    throw ConfigError("pairwise_expand: D = " + std::to_string(d) +
                      " exceeds the 2048 guard on the D^2 candidate pass");
  }
  if (d_keep < 1) throw ConfigError("pairwise_expand: D_keep must be >= 1");
  std::vector<std::int64_t> counts(static_cast<std::size_t>(d * d), 0);
  std::vector<std::pair<Eigen::Index, double>> nz;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    nz.clear();
    data.for_each_in_row(i, [&](Eigen::Index col, double val) { nz.emplace_back(col, val); });
    for (std::size_t a = 0; a < nz.size(); ++a) {
      for (std::size_t b = a; b < nz.size(); ++b) {
        ++counts[static_cast<std::size_t>(nz[a].first * d + nz[b].first)];
      }
    }
  }
  std::vector<std::pair<Eigen::Index, Eigen::Index>> candidates;
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = a; b < d; ++b) {
      if (counts[static_cast<std::size_t>(a * d + b)] > 0) candidates.emplace_back(a, b);
    }
  }
  std::sort(candidates.begin(), candidates.end(), [&](const auto& p, const auto& q) {
    const auto cp = counts[static_cast<std::size_t>(p.first * d + p.second)];
    const auto cq = counts[static_cast<std::size_t>(q.first * d + q.second)];
    if (cp != cq) return cp > cq;
    return p < q;
  });
  const Eigen::Index n_products = std::min<Eigen::Index>(d_keep, candidates.size());
  candidates.resize(static_cast<std::size_t>(n_products));

  std::vector<std::int64_t> pair_slot(static_cast<std::size_t>(d * d), -1);
  for (Eigen::Index j = 0; j < n_products; ++j) {
    const auto& [a, b] = candidates[static_cast<std::size_t>(j)];
    pair_slot[static_cast<std::size_t>(a * d + b)] = j;
  }

  std::vector<Eigen::Triplet<double>> triplets;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    nz.clear();
    data.for_each_in_row(i, [&](Eigen::Index col, double val) { nz.emplace_back(col, val); });
    for (std::size_t a = 0; a < nz.size(); ++a) {
      for (std::size_t b = a; b < nz.size(); ++b) {
        const auto slot = pair_slot[static_cast<std::size_t>(nz[a].first * d + nz[b].first)];
        if (slot >= 0) {
          triplets.emplace_back(static_cast<int>(i), static_cast<int>(slot),
                                nz[a].second * nz[b].second);
        }
      }
    }
    // original columns appended after the product block
    data.for_each_in_row(i, [&](Eigen::Index col, double val) {
      triplets.emplace_back(static_cast<int>(i), static_cast<int>(n_products + col), val);
    });
  }
  Dataset::SpMat x(data.n(), n_products + d);
  x.setFromTriplets(triplets.begin(), triplets.end());
  return Dataset::from_sparse(std::move(x), data.y());
}

}  // namespace lracv
