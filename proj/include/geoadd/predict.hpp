#pragma once

// Prediction at new points: predictor rows, mean credible intervals,
// sampling-based prediction intervals, smooth curves and spatial surfaces.

#include <Eigen/Dense>

#include <boost/math/distributions/normal.hpp>
#include <boost/random/gamma_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "geoadd/error.hpp"
#include "geoadd/inference.hpp"
#include "geoadd/random.hpp"
#include "geoadd/spatial.hpp"
#include "geoadd/splines.hpp"
#include "geoadd/table.hpp"

namespace geoadd {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// New covariate values, one row per point, in raw (untransformed) units.
struct NewPoints {
  MatrixXd linear;                 // m x p (columns follow spec.linear)
  std::vector<VectorXd> smooth;    // one vector per smooth term
  MatrixXd coords;                 // m x 2 when the model is spatial
  VectorXd N;                      // offsets N_0 (empty: all 1)

  Index size() const {
    if (linear.rows()) return linear.rows();
    if (!smooth.empty()) return smooth.front().size();
    if (coords.rows()) return coords.rows();
    return N.size();
  }

  static NewPoints from_table(const FittedModel& m, const DataTable& t) {
    NewPoints p;
    const Index n = t.rows();
    p.linear.resize(n, static_cast<Index>(m.spec.linear.size()));
    for (std::size_t k = 0; k < m.spec.linear.size(); ++k) p.linear.col(static_cast<Index>(k)) = t.column(m.spec.linear[k]);
    for (const auto& s : m.spec.smooths) p.smooth.push_back(t.column(s.name));
    if (m.layout.has_spatial()) {
      p.coords.resize(n, 2);
      p.coords.col(0) = t.column(m.spec.spatial.x_col);
      p.coords.col(1) = t.column(m.spec.spatial.y_col);
    }
    if (!m.spec.offset.empty() && t.has(m.spec.offset)) p.N = t.column(m.spec.offset);
    return p;
  }
};

struct PredictionRequest {
  double level = 0.95;
  int n_samples = 1000;
  std::uint64_t seed = 1;
};

struct PredictionResult {
  VectorXd mean, ci_lo, ci_hi, pi_lo, pi_hi, eta, eta_sd;
};

inline constexpr std::string_view kRngName = Philox::name;

/// Rows c_0 = (1, x_0, w_0, centered b_0, centered z_0(rho)) for every point.
inline MatrixXd predictor_rows(const FittedModel& m, const NewPoints& p) {
  const Index n = p.size();
  const auto& L = m.layout;
  MatrixXd C = MatrixXd::Zero(n, L.total);
  C.col(0).setOnes();
  const Index nl = static_cast<Index>(m.spec.linear.size());
  if (p.linear.cols() != nl || (nl > 0 && p.linear.rows() != n)) throw DataError("new points lack linear covariates");
  if (nl > 0) C.middleCols(1, nl) = p.linear;
  if (p.smooth.size() != m.spec.smooths.size()) throw DataError("new points lack smooth covariates");
  for (std::size_t j = 0; j < p.smooth.size(); ++j) {
    if (p.smooth[j].size() != n) throw DataError("smooth covariate '" + m.spec.smooths[j].name + "' has the wrong length");
    C.middleCols(L.smooth[j].start, L.smooth[j].size) = m.smooth_centering[j].apply(bspline_basis(p.smooth[j], m.bases[j]));
  }
  if (L.has_spatial()) {
    if (p.coords.rows() != n || p.coords.cols() != 2) throw DataError("new points lack coordinates");
    if (!p.coords.allFinite()) throw DataError("new coordinates must be finite");
    const MatrixXd w = m.coord_transform.apply(p.coords);
    C.middleCols(L.beta.size - 2, 2) = w;
    C.middleCols(L.spatial.start, L.spatial.size) =
        m.z_centering.apply(kernel_matrix(w, m.knots.knots, m.spec.spatial.kind, m.rho));
  }
  if (!C.allFinite()) throw DataError("new covariates must be finite");
  return C;
}

namespace detail {

inline double z_value(double level) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("interval level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * level);
}

// Type-7 empirical quantile of sorted data.
inline double quantile7(const std::vector<double>& s, double p) {
  const double h = (static_cast<double>(s.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline double offset_N(const VectorXd& N, Index i) { return N.size() == 0 ? 1.0 : N[i]; }

}  // namespace detail

inline double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

/// Latent mean and sd plus mean-response credible intervals.
inline PredictionResult predict_mean_ci(const FittedModel& m, const MatrixXd& rows, const VectorXd& N = {},
                                        double level = 0.95) {
  const double z = detail::z_value(level);
  PredictionResult r;
  r.eta = rows * m.posterior.mean;
  r.eta_sd = m.posterior.quad_form_diag(rows).cwiseMax(0.0).cwiseSqrt();
  const Index n = rows.rows();
  r.mean.resize(n), r.ci_lo.resize(n), r.ci_hi.resize(n);
  for (Index i = 0; i < n; ++i) {
    if (is_count(m.spec.family)) {
      const double Ni = detail::offset_N(N, i);
      r.mean[i] = std::exp(r.eta[i]) * Ni;
      r.ci_lo[i] = std::exp(r.eta[i] - z * r.eta_sd[i]) * Ni;
      r.ci_hi[i] = std::exp(r.eta[i] + z * r.eta_sd[i]) * Ni;
    } else {
      r.mean[i] = r.eta[i];
      r.ci_lo[i] = r.eta[i] - z * r.eta_sd[i];
      r.ci_hi[i] = r.eta[i] + z * r.eta_sd[i];
    }
  }
  return r;
}

/// Predictive response draws for point i (stream i of the request seed).
inline std::vector<double> predictive_draws(const FittedModel& m, double eta, double sd, double N, int n_samples,
                                            std::uint64_t seed, std::uint64_t stream) {
  Philox rng(seed, stream);
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(n_samples));
  const double phi = m.phi;
  const double noise_sd = m.spec.family == FamilyKind::Gaussian ? 1.0 / std::sqrt(m.dispersion()) : 0.0;
  for (auto& y : out) {
    const double e = eta + sd * normal(rng);
    switch (m.spec.family) {
      case FamilyKind::Gaussian:
        y = e + noise_sd * normal(rng);
        break;
      case FamilyKind::Poisson: {
        const double mu = std::exp(std::min(e, kEtaClamp)) * N;
        y = static_cast<double>(boost::random::poisson_distribution<long long, double>(mu)(rng));
        break;
      }
      case FamilyKind::NegBinomial: {
        const double mu = std::exp(std::min(e, kEtaClamp)) * N;
        const double g = boost::random::gamma_distribution<double>(phi, 1.0 / phi)(rng);
        const double rate = mu * g;
        y = rate > 0.0 ? static_cast<double>(boost::random::poisson_distribution<long long, double>(rate)(rng)) : 0.0;
        break;
      }
    }
  }
  return out;
}

/// Fills pi_lo / pi_hi from sampled responses; count bounds are rounded outward to integers.
inline void predict_interval(const FittedModel& m, PredictionResult& r, const VectorXd& N,
                             const PredictionRequest& req) {
  if (req.n_samples < 2) throw ConfigError("prediction intervals need at least 2 samples");
  const double alpha = 0.5 * (1.0 - req.level);
  detail::z_value(req.level);
  const Index n = r.eta.size();
  r.pi_lo.resize(n), r.pi_hi.resize(n);
  for (Index i = 0; i < n; ++i) {
    auto s = predictive_draws(m, r.eta[i], r.eta_sd[i], detail::offset_N(N, i), req.n_samples, req.seed,
                              static_cast<std::uint64_t>(i));
    std::sort(s.begin(), s.end());
    double lo = detail::quantile7(s, alpha), hi = detail::quantile7(s, 1.0 - alpha);
    if (is_count(m.spec.family)) lo = std::floor(lo), hi = std::ceil(hi);
    r.pi_lo[i] = lo;
    r.pi_hi[i] = hi;
  }
}

inline PredictionResult predict(const FittedModel& m, const NewPoints& p, const PredictionRequest& req = {}) {
  if (p.N.size() != 0 && m.spec.family == FamilyKind::Gaussian) throw ConfigError("offsets apply to count families only");
  const MatrixXd rows = predictor_rows(m, p);
  PredictionResult r = predict_mean_ci(m, rows, p.N, req.level);
  predict_interval(m, r, p.N, req);
  return r;
}

struct CurveResult {
  VectorXd x, fit, sd, lo, hi;
};

inline std::size_t smooth_index(const FittedModel& m, const std::string& term) {
  for (std::size_t j = 0; j < m.spec.smooths.size(); ++j)
    if (m.spec.smooths[j].name == term) return j;
  throw RequestError("unknown smooth term '" + term + "'");
}

/// Full-length rows selecting the centered basis of one smooth term.
inline MatrixXd smooth_rows(const FittedModel& m, std::size_t j, const VectorXd& grid) {
  MatrixXd rows = MatrixXd::Zero(grid.size(), m.layout.total);
  rows.middleCols(m.layout.smooth[j].start, m.layout.smooth[j].size) =
      m.smooth_centering[j].apply(bspline_basis(grid, m.bases[j]));
  return rows;
}

inline CurveResult curve_from_rows(const FittedModel& m, const MatrixXd& rows, double level) {
  const double z = detail::z_value(level);
  CurveResult c;
  c.fit = rows * m.posterior.mean;
  c.sd = m.posterior.quad_form_diag(rows).cwiseMax(0.0).cwiseSqrt();
  c.lo = c.fit - z * c.sd;
  c.hi = c.fit + z * c.sd;
  return c;
}

/// f_j on a grid with pointwise credible bands.
inline CurveResult smooth_curve(const FittedModel& m, const std::string& term, const VectorXd& grid,
                                double level = 0.95) {
  CurveResult c = curve_from_rows(m, smooth_rows(m, smooth_index(m, term), grid), level);
  c.x = grid;
  return c;
}

inline VectorXd linspace(double lo, double hi, Index n) { return VectorXd::LinSpaced(n, lo, hi); }

/// Rows for the spatial effect s(w) = beta_w' w + z(w)' u at raw coordinates.
inline MatrixXd spatial_rows(const FittedModel& m, const MatrixXd& coords) {
  if (!m.layout.has_spatial()) throw RequestError("model has no spatial component");
  const MatrixXd w = m.coord_transform.apply(coords);
  MatrixXd rows = MatrixXd::Zero(coords.rows(), m.layout.total);
  rows.middleCols(m.layout.beta.size - 2, 2) = w;
  rows.middleCols(m.layout.spatial.start, m.layout.spatial.size) =
      m.z_centering.apply(kernel_matrix(w, m.knots.knots, m.spec.spatial.kind, m.rho));
  return rows;
}

inline CurveResult spatial_surface(const FittedModel& m, const MatrixXd& coords, double level = 0.95) {
  return curve_from_rows(m, spatial_rows(m, coords), level);
}

/// Regular g x g grid over [lo0, hi0] x [lo1, hi1], first coordinate varying fastest.
inline MatrixXd grid2d(double lo0, double hi0, double lo1, double hi1, Index g) {
  MatrixXd G(g * g, 2);
  const VectorXd a = linspace(lo0, hi0, g), b = linspace(lo1, hi1, g);
  for (Index j = 0; j < g; ++j)
    for (Index i = 0; i < g; ++i) G.row(j * g + i) << a[i], b[j];
  return G;
}

}  // namespace geoadd
