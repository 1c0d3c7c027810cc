#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <cmath>
#include <string>
#include <utility>

#include "lracv/errors.hpp"

namespace lracv {

// Row-major covariate matrix X (dense or compressed sparse rows) plus the
// response vector y and cached per-row Euclidean norms. Immutable after
// construction, so it can be shared freely across threads.
class Dataset {
 public:
  using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

  static Dataset from_dense(Eigen::MatrixXd X, Eigen::VectorXd y) {
    Dataset ds;
    ds.sparse_ = false;
    ds.dense_ = std::move(X);
    ds.y_ = std::move(y);
    ds.cols_ = ds.dense_.cols();
    ds.validate(ds.dense_.rows());
    if (!ds.dense_.allFinite()) throw DataError("dataset contains non-finite covariates");
    ds.row_norms_ = ds.dense_.rowwise().norm();
    ds.finish();
    return ds;
  }

  static Dataset from_sparse(SpMat X, Eigen::VectorXd y) {
    Dataset ds;
    ds.sparse_ = true;
    ds.sp_ = std::move(X);
    ds.sp_.makeCompressed();
    ds.y_ = std::move(y);
    ds.cols_ = ds.sp_.cols();
    ds.validate(ds.sp_.rows());
    ds.row_norms_.setZero(ds.sp_.rows());
    for (Eigen::Index i = 0; i < ds.sp_.outerSize(); ++i) {
      double s = 0;
      for (SpMat::InnerIterator it(ds.sp_, i); it; ++it) {
        if (!std::isfinite(it.value())) throw DataError("dataset contains non-finite covariates");
        s += it.value() * it.value();
      }
      ds.row_norms_[i] = std::sqrt(s);
    }
    ds.finish();
    return ds;
  }

  Eigen::Index n() const { return y_.size(); }
  Eigen::Index d() const { return cols_; }
  bool is_sparse() const { return sparse_; }
  const Eigen::VectorXd& y() const { return y_; }
  const Eigen::VectorXd& row_norms() const { return row_norms_; }
  double row_norm(Eigen::Index i) const { return row_norms_[i]; }
  double row_norm_sq(Eigen::Index i) const { return row_norms_[i] * row_norms_[i]; }
  double sum_row_norms_sq() const { return sum_sq_; }

  const Eigen::MatrixXd& dense() const {
    if (sparse_) throw Error("dense() called on sparse dataset");
    return dense_;
  }
  const SpMat& sparse_mat() const {
    if (!sparse_) throw Error("sparse_mat() called on dense dataset");
    return sp_;
  }

  // x_i' v
  double row_dot(Eigen::Index i, const Eigen::VectorXd& v) const {
    if (!sparse_) return dense_.row(i).dot(v);
    double s = 0;
    for (SpMat::InnerIterator it(sp_, i); it; ++it) s += it.value() * v[it.col()];
    return s;
  }

  // out += a * x_i
  void add_scaled_row(Eigen::Index i, double a, Eigen::VectorXd& out) const {
    if (!sparse_) {
      out += a * dense_.row(i).transpose();
      return;
    }
    for (SpMat::InnerIterator it(sp_, i); it; ++it) out[it.col()] += a * it.value();
  }

  Eigen::VectorXd row_vec(Eigen::Index i) const {
    if (!sparse_) return dense_.row(i).transpose();
    Eigen::VectorXd v = Eigen::VectorXd::Zero(cols_);
    for (SpMat::InnerIterator it(sp_, i); it; ++it) v[it.col()] = it.value();
    return v;
  }

  // Densified block of rows [start, start+count).
  Eigen::MatrixXd rows_dense(Eigen::Index start, Eigen::Index count) const {
    if (!sparse_) return dense_.middleRows(start, count);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(count, cols_);
    for (Eigen::Index i = 0; i < count; ++i)
      for (SpMat::InnerIterator it(sp_, start + i); it; ++it) out(i, it.col()) = it.value();
    return out;
  }

  // Visits the stored nonzero entries of row i as f(col, value). Dense rows
  // skip exact zeros as well, so visitation order/count matches sparsity.
  template <class F>
  void for_each_in_row(Eigen::Index i, F&& f) const {
    if (!sparse_) {
      for (Eigen::Index j = 0; j < cols_; ++j)
        if (dense_(i, j) != 0.0) f(j, dense_(i, j));
      return;
    }
    for (SpMat::InnerIterator it(sp_, i); it; ++it) f(it.col(), it.value());
  }

  Eigen::VectorXd mul(const Eigen::VectorXd& v) const {
    return sparse_ ? Eigen::VectorXd(sp_ * v) : Eigen::VectorXd(dense_ * v);
  }
  Eigen::MatrixXd mul(const Eigen::MatrixXd& m) const {
    return sparse_ ? Eigen::MatrixXd(sp_ * m) : Eigen::MatrixXd(dense_ * m);
  }
  Eigen::VectorXd tmul(const Eigen::VectorXd& u) const {
    return sparse_ ? Eigen::VectorXd(sp_.transpose() * u) : Eigen::VectorXd(dense_.transpose() * u);
  }
  Eigen::MatrixXd tmul(const Eigen::MatrixXd& m) const {
    return sparse_ ? Eigen::MatrixXd(sp_.transpose() * m) : Eigen::MatrixXd(dense_.transpose() * m);
  }

  // X' diag(w) X, densified. Callers guard D before requesting this.
  Eigen::MatrixXd weighted_gram(const Eigen::VectorXd& w) const {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(cols_, cols_);
    if (!sparse_) {
      Eigen::MatrixXd s = w.cwiseSqrt().asDiagonal() * dense_;
      h.selfadjointView<Eigen::Lower>().rankUpdate(s.transpose());
    } else {
      for (Eigen::Index i = 0; i < n(); ++i) {
        const double wi = w[i];
        if (wi == 0.0) continue;
        for (SpMat::InnerIterator a(sp_, i); a; ++a)
          for (SpMat::InnerIterator b(sp_, i); b && b.col() <= a.col(); ++b)
            h(a.col(), b.col()) += wi * a.value() * b.value();
      }
    }
    return h.selfadjointView<Eigen::Lower>();
  }

  // diag(X' diag(w) X): per-column sums of w_n x_{nd}^2.
  Eigen::VectorXd weighted_col_sq_sums(const Eigen::VectorXd& w) const {
    if (!sparse_) return (dense_.array().square().matrix().transpose() * w);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(cols_);
    for (Eigen::Index i = 0; i < n(); ++i)
      for (SpMat::InnerIterator it(sp_, i); it; ++it)
        out[it.col()] += w[i] * it.value() * it.value();
    return out;
  }

  Eigen::MatrixXd dense_copy() const { return sparse_ ? Eigen::MatrixXd(sp_) : dense_; }

 private:
  void validate(Eigen::Index xrows) const {
    if (xrows < 1 || cols_ < 1) throw DataError("dataset must have N >= 1 and D >= 1");
    if (y_.size() != xrows)
      throw DataError("response length " + std::to_string(y_.size()) + " != row count " +
                      std::to_string(xrows));
    if (!y_.allFinite()) throw DataError("dataset contains non-finite responses");
  }

  void finish() { sum_sq_ = row_norms_.squaredNorm(); }

  bool sparse_ = false;
  Eigen::MatrixXd dense_;
  SpMat sp_;
  Eigen::VectorXd y_;
  Eigen::VectorXd row_norms_;
  Eigen::Index cols_ = 0;
  double sum_sq_ = 0;
};

}  // namespace lracv
