#pragma once

// Effective degrees of freedom, BIC and the rank-r Wald test for smooth terms.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "geoadd/error.hpp"
#include "geoadd/inference.hpp"
#include "geoadd/splines.hpp"

namespace geoadd {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SmoothTestResult {
  std::string term;
  double statistic = 0;  // T_r
  int rank = 0;          // r actually used
  double ed = 0;
  double p_value = 1;
  std::vector<std::string> warnings;
};

inline const EffectiveDof& effective_dof(const FittedModel& m) { return m.ed; }

inline double bic(double log_lik, double ed, Index n) {
  return -2.0 * log_lik + ed * std::log(static_cast<double>(n));
}

inline double bic(const FittedModel& m) { return bic(m.log_lik, m.ed.total, m.n); }

/// Upper tail of Gamma(shape r/2, rate 1/2), i.e. chi-square with r dof.
inline double smooth_test_p_value(double T, int r) {
  if (T <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * r, 0.5 * T);
}

inline int smooth_test_rank(double ed) {
  return std::max(1, static_cast<int>(std::lround(ed)));
}

namespace detail {

// T from eigenpairs (ascending) of the covariance and the coordinates of f in that eigenbasis.
inline SmoothTestResult smooth_test_from_eigen(const VectorXd& evals, const VectorXd& coords, double ed) {
  SmoothTestResult res;
  res.ed = ed;
  const int want = smooth_test_rank(ed);
  const double top = evals.size() ? evals.maxCoeff() : 0.0;
  int kept = 0;
  for (Index i = 0; i < evals.size(); ++i)
    if (top > 0.0 && evals[i] > 1e-10 * top) ++kept;
  int r = want;
  if (kept < want) {
    r = kept;
    res.warnings.push_back("covariance rank " + std::to_string(kept) + " is below the requested rank " +
                           std::to_string(want));
  }
  double T = 0.0;
  for (int k = 0; k < r; ++k) {
    const Index i = evals.size() - 1 - k;
    T += coords[i] * coords[i] / evals[i];
  }
  res.rank = r;
  res.statistic = T;
  res.p_value = r > 0 ? smooth_test_p_value(T, r) : 1.0;
  return res;
}

}  // namespace detail

/// T_r = f' V^{r-} f with a dense eigendecomposition of V.
inline SmoothTestResult smooth_test_statistic(const VectorXd& f, const MatrixXd& V, double ed) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(V);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition of V_f failed");
  return detail::smooth_test_from_eigen(es.eigenvalues(), es.eigenvectors().transpose() * f, ed);
}

/// Smooth-effect test at the training rows of `term`.
inline SmoothTestResult smooth_test(const FittedModel& m, const std::string& term) {
  std::size_t j = 0;
  while (j < m.spec.smooths.size() && m.spec.smooths[j].name != term) ++j;
  if (j == m.spec.smooths.size()) throw RequestError("unknown smooth term '" + term + "'");

  const Reduction& red = m.posterior.reduction;
  const auto& full = m.layout.smooth[j];
  const auto& rr = red.reduced_smooth(j);
  const MatrixXd G = m.smooth_centering[j].apply(bspline_basis(m.smooth_x[j], m.bases[j])) * red.complement(j);
  const VectorXd theta = m.posterior.mean.segment(full.start, full.size);
  const VectorXd theta_r = red.complement(j).transpose() * theta;
  const MatrixXd Lb = m.posterior.chol.middleRows(rr.start, rr.size);
  const MatrixXd S = Lb * Lb.transpose();

  SmoothTestResult res;
  if (G.rows() >= G.cols()) {
    // V = G S G' = Q (R S R') Q', and f = Q R theta_r.
    Eigen::HouseholderQR<MatrixXd> qr(G);
    const MatrixXd R = qr.matrixQR().topRows(G.cols()).triangularView<Eigen::Upper>();
    const MatrixXd M = R * S * R.transpose();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition of V_f failed");
    res = detail::smooth_test_from_eigen(es.eigenvalues(), es.eigenvectors().transpose() * (R * theta_r),
                                         m.ed.smooth[j]);
  } else {
    res = smooth_test_statistic(G * theta_r, G * S * G.transpose(), m.ed.smooth[j]);
  }
  res.term = term;
  return res;
}

inline std::vector<SmoothTestResult> smooth_tests(const FittedModel& m) {
  std::vector<SmoothTestResult> out;
  for (const auto& s : m.spec.smooths) out.push_back(smooth_test(m, s.name));
  return out;
}

}  // namespace geoadd
