#pragma once

// Identified parametrization and Gaussian posterior storage.
//
// A centered B-spline block annihilates the constant coefficient direction
// e = 1/sqrt(K), and the difference penalty does too (up to its ridge), so
// that direction is informed only by lambda_j * ridge. Inference runs in the
// complement of these directions; their exact prior-only contributions are
// added back analytically.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "geoadd/design.hpp"
#include "geoadd/error.hpp"

namespace geoadd {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// K x (K-1) orthonormal basis of the complement of the constant vector.
inline MatrixXd constant_complement(Index K) {
  if (K < 2) return MatrixXd(K, 0);
  const double e = 1.0 / std::sqrt(static_cast<double>(K));
  VectorXd v = VectorXd::Constant(K, -e);
  v[0] += 1.0;
  MatrixXd H = MatrixXd::Identity(K, K) - (2.0 / v.squaredNorm()) * v * v.transpose();
  return H.rightCols(K - 1);
}

/// Block-diagonal map T between identified coordinates and the full vector.
class Reduction {
 public:
  Reduction() = default;

  explicit Reduction(const Layout& layout) : layout_(layout) {
    Index pos = layout.beta.size;
    reduced_beta_ = {0, layout.beta.size};
    for (const auto& r : layout.smooth) {
      U_.push_back(constant_complement(r.size));
      reduced_smooth_.push_back({pos, r.size - 1});
      pos += r.size - 1;
    }
    reduced_spatial_ = {pos, layout.spatial.size};
    pos += layout.spatial.size;
    reduced_total_ = pos;
  }

  const Layout& layout() const { return layout_; }
  Index full_size() const { return layout_.total; }
  Index reduced_size() const { return reduced_total_; }
  const BlockRange& reduced_beta() const { return reduced_beta_; }
  const BlockRange& reduced_smooth(std::size_t j) const { return reduced_smooth_[j]; }
  const BlockRange& reduced_spatial() const { return reduced_spatial_; }
  const MatrixXd& complement(std::size_t j) const { return U_[j]; }

  /// C T for a matrix whose columns follow the full layout.
  MatrixXd reduce_cols(const MatrixXd& C) const {
    MatrixXd out(C.rows(), reduced_total_);
    out.leftCols(layout_.beta.size) = C.leftCols(layout_.beta.size);
    for (std::size_t j = 0; j < U_.size(); ++j) {
      const auto& f = layout_.smooth[j];
      const auto& r = reduced_smooth_[j];
      out.middleCols(r.start, r.size).noalias() = C.middleCols(f.start, f.size) * U_[j];
    }
    if (layout_.has_spatial())
      out.middleCols(reduced_spatial_.start, reduced_spatial_.size) =
          C.middleCols(layout_.spatial.start, layout_.spatial.size);
    return out;
  }

  /// T' x.
  VectorXd to_reduced(const VectorXd& x) const {
    return reduce_cols(x.transpose()).transpose();
  }

  /// T x.
  VectorXd to_full(const VectorXd& xr) const {
    VectorXd x(layout_.total);
    x.head(layout_.beta.size) = xr.head(layout_.beta.size);
    for (std::size_t j = 0; j < U_.size(); ++j) {
      const auto& f = layout_.smooth[j];
      const auto& r = reduced_smooth_[j];
      x.segment(f.start, f.size).noalias() = U_[j] * xr.segment(r.start, r.size);
    }
    if (layout_.has_spatial())
      x.segment(layout_.spatial.start, layout_.spatial.size) =
          xr.segment(reduced_spatial_.start, reduced_spatial_.size);
    return x;
  }

  /// Identified precision T' Q T assembled block by block, scaled by `scale`.
  MatrixXd reduced_precision(const DesignSystem& d, const VectorXd& lambda, double scale = 1.0) const {
    d.check_lambda(lambda);
    MatrixXd Q = MatrixXd::Zero(reduced_total_, reduced_total_);
    Q.topLeftCorner(layout_.beta.size, layout_.beta.size).diagonal().setConstant(scale * d.priors.zeta);
    for (std::size_t j = 0; j < U_.size(); ++j) {
      const auto& r = reduced_smooth_[j];
      Q.block(r.start, r.start, r.size, r.size).noalias() =
          (scale * lambda[static_cast<Index>(j)]) * (U_[j].transpose() * d.penalties[j].P * U_[j]);
    }
    if (layout_.has_spatial()) {
      const auto& r = reduced_spatial_;
      Q.block(r.start, r.start, r.size, r.size) = (scale * lambda[lambda.size() - 1]) * d.spatial.omega_jittered();
    }
    return Q;
  }

  /// Precision carried by each dropped constant direction.
  VectorXd null_precision(const DesignSystem& d, const VectorXd& lambda, double scale = 1.0) const {
    VectorXd out(static_cast<Index>(U_.size()));
    for (std::size_t j = 0; j < U_.size(); ++j) {
      const double ridge = d.penalties[j].ridge;
      if (!(ridge > 0.0)) throw ConfigError("fitting requires a positive penalty ridge");
      out[static_cast<Index>(j)] = scale * lambda[static_cast<Index>(j)] * ridge;
    }
    return out;
  }

 private:
  Layout layout_;
  std::vector<MatrixXd> U_;
  BlockRange reduced_beta_;
  std::vector<BlockRange> reduced_smooth_;
  BlockRange reduced_spatial_;
  Index reduced_total_ = 0;
};

/// Factorization of an identified precision H_r.
struct PrecisionFactor {
  Eigen::LLT<MatrixXd> llt;
  double log_det = 0.0;

  explicit PrecisionFactor(const MatrixXd& H) : llt(H) {
    if (llt.info() != Eigen::Success)
      throw NumericalError("posterior precision is not positive definite; use stronger priors or a larger jitter");
    log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    if (!std::isfinite(log_det))
      throw NumericalError("posterior precision has a non-finite log-determinant");
  }
};

/// Lower-triangular L with L L' = H^{-1}.
inline MatrixXd inverse_cholesky(const MatrixXd& H) {
  const Index p = H.rows();
  // Reversal permutation turns the lower factor of J H J into an upper factor of H.
  MatrixXd A = H.reverse();
  Eigen::LLT<MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw NumericalError("posterior precision is not positive definite; use stronger priors or a larger jitter");
  MatrixXd U = MatrixXd(llt.matrixL()).reverse();  // upper, H = U U'
  MatrixXd Uinv = MatrixXd::Identity(p, p);
  U.triangularView<Eigen::Upper>().solveInPlace(Uinv);
  return Uinv.transpose();
}

/// Gaussian posterior N(mean, Sigma) with Sigma = T Sigma_r T' + sum_j null_var_j e_j e_j'.
struct Posterior {
  Reduction reduction;
  VectorXd mean;       // full coordinates
  MatrixXd chol;       // lower Cholesky factor of Sigma_r
  VectorXd null_var;   // per smooth block

  /// Diagonal of rows * Sigma * rows' for rows in full coordinates.
  VectorXd quad_form_diag(const MatrixXd& rows) const {
    const MatrixXd R = reduction.reduce_cols(rows) * chol.triangularView<Eigen::Lower>();
    VectorXd out = R.rowwise().squaredNorm();
    const auto& layout = reduction.layout();
    for (std::size_t j = 0; j < layout.smooth.size(); ++j) {
      const auto& f = layout.smooth[j];
      const double k = static_cast<double>(f.size);
      const VectorXd s = rows.middleCols(f.start, f.size).rowwise().sum();
      out.array() += s.array().square() * (null_var[static_cast<Index>(j)] / k);
    }
    return out;
  }

  MatrixXd reduced_covariance() const {
    return chol.triangularView<Eigen::Lower>() * chol.transpose();
  }

  /// Dense covariance in full coordinates.
  MatrixXd covariance() const {
    const Index p = reduction.full_size();
    const MatrixXd Sr = reduced_covariance();
    MatrixXd T(p, reduction.reduced_size());
    for (Index i = 0; i < reduction.reduced_size(); ++i) {
      VectorXd e = VectorXd::Zero(reduction.reduced_size());
      e[i] = 1.0;
      T.col(i) = reduction.to_full(e);
    }
    MatrixXd S = T * Sr * T.transpose();
    const auto& layout = reduction.layout();
    for (std::size_t j = 0; j < layout.smooth.size(); ++j) {
      const auto& f = layout.smooth[j];
      S.block(f.start, f.start, f.size, f.size).array() += null_var[static_cast<Index>(j)] / static_cast<double>(f.size);
    }
    return S;
  }
};

}  // namespace geoadd
