#pragma once

// Shared test helpers: quad-precision reference routines and toy data.

#include <Eigen/Dense>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>

#include <cmath>
#include <vector>

#include "geoadd.hpp"

namespace testing_support {

using quad = boost::multiprecision::cpp_bin_float_quad;
using QMat = std::vector<std::vector<quad>>;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline QMat to_quad(const MatrixXd& A) {
  QMat Q(static_cast<std::size_t>(A.rows()), std::vector<quad>(static_cast<std::size_t>(A.cols())));
  for (Index i = 0; i < A.rows(); ++i)
    for (Index j = 0; j < A.cols(); ++j) Q[i][j] = A(i, j);
  return Q;
}

inline std::vector<quad> to_quad(const VectorXd& v) {
  std::vector<quad> q(static_cast<std::size_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) q[i] = v[i];
  return q;
}

inline QMat matmul_tn(const QMat& A, const QMat& B) {  // A' B
  const std::size_t n = A.size(), p = A[0].size(), r = B[0].size();
  QMat out(p, std::vector<quad>(r, quad(0)));
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < p; ++i) {
      if (A[k][i] == 0) continue;
      for (std::size_t j = 0; j < r; ++j) out[i][j] += A[k][i] * B[k][j];
    }
  return out;
}

/// Lower Cholesky factor in quad precision; throws on a non-positive pivot.
inline QMat cholesky(const QMat& A) {
  const std::size_t n = A.size();
  QMat L(n, std::vector<quad>(n, quad(0)));
  for (std::size_t j = 0; j < n; ++j) {
    quad s = A[j][j];
    for (std::size_t k = 0; k < j; ++k) s -= L[j][k] * L[j][k];
    if (!(s > 0)) throw std::runtime_error("quad cholesky: matrix not positive definite");
    L[j][j] = sqrt(s);
    for (std::size_t i = j + 1; i < n; ++i) {
      quad t = A[i][j];
      for (std::size_t k = 0; k < j; ++k) t -= L[i][k] * L[j][k];
      L[i][j] = t / L[j][j];
    }
  }
  return L;
}

inline quad log_det_spd(const QMat& A) {
  const QMat L = cholesky(A);
  quad s = 0;
  for (std::size_t i = 0; i < L.size(); ++i) s += log(L[i][i]);
  return 2 * s;
}

/// Solves A x = b for SPD A in quad precision.
inline std::vector<quad> solve_spd(const QMat& A, const std::vector<quad>& b) {
  const QMat L = cholesky(A);
  const std::size_t n = b.size();
  std::vector<quad> z(n), x(n);
  for (std::size_t i = 0; i < n; ++i) {
    quad t = b[i];
    for (std::size_t k = 0; k < i; ++k) t -= L[i][k] * z[k];
    z[i] = t / L[i][i];
  }
  for (std::size_t i = n; i-- > 0;) {
    quad t = z[i];
    for (std::size_t k = i + 1; k < n; ++k) t -= L[k][i] * x[k];
    x[i] = t / L[i][i];
  }
  return x;
}

inline MatrixXd inverse_quad(const MatrixXd& A) {
  const QMat Aq = to_quad(A);
  const Index n = A.rows();
  MatrixXd out(n, n);
  for (Index j = 0; j < n; ++j) {
    std::vector<quad> e(static_cast<std::size_t>(n), quad(0));
    e[j] = 1;
    const auto x = solve_spd(Aq, e);
    for (Index i = 0; i < n; ++i) out(i, j) = static_cast<double>(x[i]);
  }
  return out;
}

/// Data frame with response y, linear x1, smooth x2 and coordinates (w1, w2).
/// A positive `margin` keeps x2 and the coordinates away from the domain
/// edges, so the table can serve as new points for a model fitted to
/// another toy table.
inline geoadd::DataTable toy_table(int n, std::uint64_t seed, geoadd::FamilyKind family = geoadd::FamilyKind::Gaussian,
                                   double noise_sd = 0.3, double margin = 0.0) {
  geoadd::Philox rng(seed, 0);
  boost::random::normal_distribution<double> nd;
  VectorXd y(n), x1(n), x2(n), w1(n), w2(n);
  for (int i = 0; i < n; ++i) {
    x1[i] = rng.uniform();
    x2[i] = margin + (1.0 - 2.0 * margin) * rng.uniform();
    w1[i] = (1.0 - margin) * (-3.0 + 6.0 * rng.uniform());
    w2[i] = (1.0 - margin) * (-3.0 + 6.0 * rng.uniform());
    const double eta = 1.0 - 0.5 * x1[i] + std::cos(2.0 * M_PI * x2[i]) * 0.5 +
                       geoadd::true_surface(geoadd::SurfaceTag::S1, w1[i], w2[i]);
    if (family == geoadd::FamilyKind::Gaussian) {
      y[i] = eta + noise_sd * nd(rng);
    } else {
      double rate = std::exp(eta);
      if (family == geoadd::FamilyKind::NegBinomial) rate *= std::exp(0.4 * nd(rng));
      y[i] = static_cast<double>(boost::random::poisson_distribution<long long, double>(rate)(rng));
    }
  }
  geoadd::DataTable t;
  t.set_column("y", y);
  t.set_column("x1", x1);
  t.set_column("x2", x2);
  t.set_column("w1", w1);
  t.set_column("w2", w2);
  return t;
}

inline geoadd::ModelSpec toy_spec(geoadd::FamilyKind family = geoadd::FamilyKind::Gaussian, int num_basis = 10,
                                  int knots = 20, bool linear = true) {
  geoadd::ModelSpec s;
  s.family = family;
  s.response = "y";
  if (linear) s.linear = {"x1"};
  geoadd::SmoothSpec sm;
  sm.name = "x2";
  sm.num_basis = num_basis;
  s.smooths.push_back(sm);
  s.spatial.include = true;
  s.spatial.x_col = "w1";
  s.spatial.y_col = "w2";
  s.spatial.num_knots = knots;
  return s;
}

/// Gaussian log hyperposterior evaluated term by term in quad precision on the
/// full (unreduced) coefficient space, with every penalty rebuilt exactly.
/// The constants the implementation drops (log|P_j| and p_beta log zeta) are
/// removed so the two values are directly comparable.
inline double gaussian_hyper_oracle(const geoadd::DesignBuilder& b, const geoadd::HyperState& st) {
  const double rho = b.layout().has_spatial() ? std::exp(st.v_rho) : 1.0;
  const geoadd::DesignSystem d = b.at(rho);
  const auto& L = d.layout;
  const auto& pr = d.priors;
  const std::size_t p = static_cast<std::size_t>(L.total);
  QMat Q(p, std::vector<quad>(p, quad(0)));
  quad dropped = quad(0.5 * static_cast<double>(L.beta.size)) * log(quad(pr.zeta));
  for (Index i = 0; i < L.beta.size; ++i) Q[i][i] = pr.zeta;
  for (std::size_t j = 0; j < L.smooth.size(); ++j) {
    const auto& sm = b.spec().smooths[j];
    const QMat D = to_quad(geoadd::difference_matrix(sm.num_basis, sm.penalty_order)), DtD = matmul_tn(D, D);
    QMat P = DtD;
    for (std::size_t i = 0; i < P.size(); ++i) P[i][i] += quad(sm.ridge);
    dropped += log_det_spd(P) / 2;
    const quad lam = exp(quad(st.v[static_cast<Index>(j)]));
    const std::size_t s0 = static_cast<std::size_t>(L.smooth[j].start);
    for (std::size_t r = 0; r < P.size(); ++r)
      for (std::size_t c = 0; c < P.size(); ++c) Q[s0 + r][s0 + c] = lam * P[r][c];
  }
  if (L.has_spatial()) {
    const MatrixXd Om = d.spatial.omega_jittered();
    const quad lam = exp(quad(st.v[st.v.size() - 1]));
    const std::size_t s0 = static_cast<std::size_t>(L.spatial.start);
    for (Index r = 0; r < Om.rows(); ++r)
      for (Index c = 0; c < Om.cols(); ++c) Q[s0 + r][s0 + c] = lam * quad(Om(r, c));
  }
  const QMat Cq = to_quad(d.C);
  QMat A = matmul_tn(Cq, Cq);
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < p; ++c) A[r][c] += Q[r][c];
  const QMat Cy = matmul_tn(Cq, to_quad(MatrixXd(b.y())));
  std::vector<quad> rhs(p);
  for (std::size_t i = 0; i < p; ++i) rhs[i] = Cy[i][0];
  const auto xi = solve_spd(A, rhs);
  // y'y - y'C xi equals the residual sum of squares plus xi'Q xi at the mode.
  quad S = 0;
  for (Index i = 0; i < b.n(); ++i) S += quad(b.y()[i]) * b.y()[i];
  for (std::size_t i = 0; i < p; ++i) S -= rhs[i] * xi[i];

  const quad n = static_cast<double>(b.n());
  quad val = log_det_spd(Q) / 2 - log_det_spd(A) / 2 - n / 2 * log(S);
  for (Index j = 0; j < st.v.size(); ++j) {
    const quad v = st.v[j];
    val += quad(pr.nu) / 2 * v - (quad(pr.nu) / 2 + pr.a_delta) * log(quad(pr.nu) / 2 * exp(v) + pr.b_delta);
  }
  return static_cast<double>(val - dropped);
}

inline geoadd::DataTable new_points(int n, std::uint64_t seed, geoadd::FamilyKind family = geoadd::FamilyKind::Gaussian) {
  return toy_table(n, seed, family, 0.3, 0.1);
}

inline double max_abs(const MatrixXd& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace testing_support
