#pragma once

// Penalized B-spline (P-spline) building blocks: clamped B-spline bases,
// discrete difference penalties and column centering.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "geoadd/error.hpp"

namespace geoadd {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Clamped (open) B-spline basis of a given degree on [lo, hi].
struct BSplineBasis {
  std::vector<double> knots;  // full knot vector, size() + degree + 1 entries
  int degree = 3;
  int num_basis = 0;
  double lo = 0.0;
  double hi = 1.0;

  int size() const { return num_basis; }

  /// Equally spaced interior knots, boundary knots repeated degree + 1 times.
  static BSplineBasis uniform(double lo, double hi, int num_basis, int degree = 3) {
    if (degree < 0) throw ConfigError("B-spline degree must be nonnegative");
    if (num_basis < degree + 1) {
      throw ConfigError("B-spline basis needs at least degree + 1 = " +
                        std::to_string(degree + 1) + " functions, got " +
                        std::to_string(num_basis));
    }
    if (!(std::isfinite(lo) && std::isfinite(hi)) || !(lo < hi)) {
      throw ConfigError("B-spline domain must satisfy lo < hi (got [" + std::to_string(lo) +
                        ", " + std::to_string(hi) + "])");
    }
    BSplineBasis b;
    b.degree = degree;
    b.num_basis = num_basis;
    b.lo = lo;
    b.hi = hi;
    const int interior = num_basis - degree - 1;
    b.knots.reserve(static_cast<std::size_t>(num_basis + degree + 1));
    for (int i = 0; i <= degree; ++i) b.knots.push_back(lo);
    const double step = (hi - lo) / (interior + 1);
    for (int i = 1; i <= interior; ++i) b.knots.push_back(lo + i * step);
    for (int i = 0; i <= degree; ++i) b.knots.push_back(hi);
    return b;
  }

  void validate() const {
    if (num_basis < degree + 1) throw ConfigError("B-spline basis has too few functions");
    if (knots.size() != static_cast<std::size_t>(num_basis + degree + 1)) {
      throw ConfigError("B-spline knot vector has the wrong length");
    }
    if (!std::is_sorted(knots.begin(), knots.end())) {
      throw ConfigError("B-spline knot vector must be non-decreasing");
    }
  }
};

namespace detail {

// Evaluation points this close to the boundary are treated as on it.
inline double snap_to_domain(double x, double lo, double hi, Index i) {
  const double tol = 1e-12 * (hi - lo);
  if (!(x >= lo - tol && x <= hi + tol)) {
    throw DomainError("value " + std::to_string(x) + " at index " + std::to_string(i) +
                      " lies outside the spline domain [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "]");
  }
  return std::clamp(x, lo, hi);
}

}  // namespace detail

/// Evaluates all basis functions at `x`; row i holds (b_1(x_i), ..., b_K(x_i)).
inline MatrixXd bspline_basis(const Eigen::Ref<const VectorXd>& x, const BSplineBasis& basis) {
  const int p = basis.degree;
  const int K = basis.num_basis;
  const auto& t = basis.knots;
  MatrixXd out = MatrixXd::Zero(x.size(), K);
  std::vector<double> left(p + 1), right(p + 1), N(p + 1);

  for (Index i = 0; i < x.size(); ++i) {
    const double xi = detail::snap_to_domain(x[i], basis.lo, basis.hi, i);
    // Span s with t[s] <= xi < t[s+1], restricted to [p, K-1].
    int span;
    if (xi >= basis.hi) {
      span = K - 1;
    } else {
      auto it = std::upper_bound(t.begin() + p, t.begin() + K + 1, xi);
      span = static_cast<int>(it - t.begin()) - 1;
      span = std::clamp(span, p, K - 1);
    }
    N[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
      left[j] = xi - t[span + 1 - j];
      right[j] = t[span + j] - xi;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double temp = N[r] / (right[r + 1] + left[j - r]);
        N[r] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      N[j] = saved;
    }
    for (int j = 0; j <= p; ++j) out(i, span - p + j) = N[j];
  }
  return out;
}

/// m-th order difference matrix D_m of shape (K - m) x K.
inline MatrixXd difference_matrix(int K, int m) {
  if (m < 1 || K <= m) {
    throw ConfigError("difference penalty needs K > m >= 1 (K = " + std::to_string(K) +
                      ", m = " + std::to_string(m) + ")");
  }
  MatrixXd D = MatrixXd::Identity(K, K);
  for (int k = 0; k < m; ++k) {
    const Index rows = D.rows() - 1;
    D = (D.bottomRows(rows) - D.topRows(rows)).eval();
  }
  return D;
}

/// P = D_m' D_m + ridge * I.
struct PenaltyMatrix {
  MatrixXd P;
  int order = 2;
  double ridge = 1e-12;
  double log_det = 0.0;  // log|P|

  Index size() const { return P.rows(); }
};

inline PenaltyMatrix difference_penalty(int K, int m = 2, double ridge = 1e-12) {
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) {
    throw ConfigError("penalty ridge must be finite and nonnegative");
  }
  const MatrixXd D = difference_matrix(K, m);
  PenaltyMatrix pen;
  pen.order = m;
  pen.ridge = ridge;
  pen.P = D.transpose() * D;
  pen.P.diagonal().array() += ridge;
  // D' D has an m-dimensional null space; its nonzero spectrum is that of D D'.
  if (ridge > 0.0) {
    MatrixXd G = D * D.transpose();
    G.diagonal().array() += ridge;
    Eigen::LLT<MatrixXd> llt(G);
    pen.log_det = m * std::log(ridge) + 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  } else {
    pen.log_det = -std::numeric_limits<double>::infinity();
  }
  return pen;
}

/// Column means recorded at fit time and reused verbatim for new data.
struct CenteringTransform {
  VectorXd column_means;

  MatrixXd apply(const MatrixXd& B) const { return B.rowwise() - column_means.transpose(); }
};

inline std::pair<MatrixXd, CenteringTransform> center_columns(const MatrixXd& B) {
  if (B.rows() < 1) throw DataError("cannot center a matrix with no rows");
  CenteringTransform tr{B.colwise().mean().transpose()};
  return {tr.apply(B), std::move(tr)};
}

}  // namespace geoadd
