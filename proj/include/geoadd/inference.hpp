#pragma once

// Laplace approximation of p(xi | lambda, rho, phi, D), the conjugate Gaussian
// solution, the log hyperparameter posterior and its MAP optimization.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geoadd/design.hpp"
#include "geoadd/error.hpp"
#include "geoadd/family.hpp"
#include "geoadd/nelder_mead.hpp"
#include "geoadd/posterior.hpp"

namespace geoadd {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct NewtonOptions {
  int max_iter = 100;
  int max_halvings = 30;
  double rel_tol = 1e-8;
  double grad_tol = 1e-6;
};

/// Gamma(shape, rate) posterior of the Gaussian noise precision.
struct GammaPosterior {
  double shape = 0.0;
  double rate = 0.0;
  double mean() const { return shape / rate; }
};

struct LaplaceResult {
  Posterior posterior;           // mode in posterior.mean
  VectorXd xi_reduced;
  VectorXd weights;              // observed-information weights at the mode
  double log_det_precision = 0;  // log|C'WC + Q| (Gaussian conjugate: log|C'C + Q|)
  double log_lik = 0;
  double quad = 0;               // xi' Q xi
  double objective = 0;
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0;
  Index clamped = 0;
  std::vector<double> objective_trace;
  std::optional<GammaPosterior> tau;

  const VectorXd& xi_hat() const { return posterior.mean; }
};

// ---------------------------------------------------------------------------
// Inner objective in full coordinates: log L(C xi) - scale/2 xi' Q xi.

inline double inner_objective(const DesignSystem& d, FamilyKind f, const VectorXd& y, const VectorXd& offset,
                              const VectorXd& lambda, double phi, const VectorXd& xi, double scale = 1.0) {
  const VectorXd eta = d.C * xi;
  return log_likelihood(f, y, eta, offset, phi) - 0.5 * scale * xi.dot(d.precision(lambda) * xi);
}

inline VectorXd inner_gradient(const DesignSystem& d, FamilyKind f, const VectorXd& y, const VectorXd& offset,
                               const VectorXd& lambda, double phi, const VectorXd& xi, double scale = 1.0) {
  const auto sw = score_and_weight(f, y, d.C * xi, offset, phi);
  return d.C.transpose() * sw.g - scale * (d.precision(lambda) * xi);
}

/// Hessian of the inner objective, -(C'WC + scale Q).
inline MatrixXd inner_hessian(const DesignSystem& d, FamilyKind f, const VectorXd& y, const VectorXd& offset,
                              const VectorXd& lambda, double phi, const VectorXd& xi, double scale = 1.0) {
  const auto sw = score_and_weight(f, y, d.C * xi, offset, phi);
  return -(d.C.transpose() * sw.w.asDiagonal() * d.C + scale * d.precision(lambda));
}

namespace detail {

inline MatrixXd weighted_gram(const MatrixXd& C, const VectorXd& w) {
  const MatrixXd Cw = C.array().colwise() * w.array().sqrt();
  MatrixXd G = MatrixXd::Zero(C.cols(), C.cols());
  G.selfadjointView<Eigen::Lower>().rankUpdate(Cw.transpose());
  return G.selfadjointView<Eigen::Lower>();
}

inline void finalize_posterior(LaplaceResult& r, const Reduction& red, const MatrixXd& H, const VectorXd& null_prec,
                               double cov_scale) {
  const PrecisionFactor pf(H);
  r.posterior.reduction = red;
  r.posterior.mean = red.to_full(r.xi_reduced);
  r.posterior.chol = inverse_cholesky(H) / std::sqrt(cov_scale);
  r.posterior.null_var = (null_prec * cov_scale).cwiseInverse();
  r.log_det_precision = pf.log_det + null_prec.array().log().sum();
}

}  // namespace detail

/// Posterior mode by damped Newton iterations in identified coordinates.
///
/// `scale` multiplies the prior precision (1 for count families; tau when the
/// Gaussian family is run through this generic path).
inline LaplaceResult newton_mode(const DesignSystem& d, FamilyKind f, const VectorXd& y, const VectorXd& offset,
                                 const VectorXd& lambda, double phi, const VectorXd& init = {},
                                 const NewtonOptions& opt = {}, double scale = 1.0) {
  const Reduction red(d.layout);
  const MatrixXd Cr = red.reduce_cols(d.C);
  const MatrixXd Qr = red.reduced_precision(d, lambda, scale);
  const VectorXd null_prec = red.null_precision(d, lambda, scale);

  LaplaceResult r;
  VectorXd x = init.size() == 0 ? VectorXd::Zero(red.reduced_size()) : red.to_reduced(init);
  auto objective = [&](const VectorXd& xr, Index* clamped) {
    const VectorXd eta = Cr * xr;
    return log_likelihood(f, y, eta, offset, phi, clamped) - 0.5 * xr.dot(Qr * xr);
  };
  double fx = objective(x, &r.clamped);
  if (!std::isfinite(fx)) throw NumericalError("inner objective is not finite at the starting point");
  r.objective_trace.push_back(fx);

  bool polish = false;
  for (int it = 0; it < opt.max_iter && !r.converged; ++it) {
    const auto sw = score_and_weight(f, y, Cr * x, offset, phi);
    const VectorXd grad = Cr.transpose() * sw.g - Qr * x;
    if (grad.cwiseAbs().maxCoeff() < opt.grad_tol) {
      r.converged = true;
      break;
    }
    MatrixXd H = detail::weighted_gram(Cr, sw.w);
    H += Qr;
    Eigen::LLT<MatrixXd> llt(H);
    if (llt.info() != Eigen::Success)
      throw NumericalError("Newton Hessian is not positive definite; use stronger priors or a larger jitter");
    const VectorXd delta = llt.solve(grad);
    ++r.iterations;

    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h, t *= 0.5) {
      const VectorXd xn = x + t * delta;
      Index cl = 0;
      const double fn = objective(xn, &cl);
      if (std::isfinite(fn) && fn >= fx) {
        const double change = fn - fx;
        x = xn;
        fx = fn;
        r.clamped += cl;
        accepted = true;
        // One polishing step after the change criterion first holds.
        if (polish) r.converged = true;
        else if (change < opt.rel_tol * std::max(1.0, std::abs(fx))) polish = true;
        break;
      }
    }
    r.objective_trace.push_back(fx);
    if (!accepted) {
      // No ascent along the Newton direction: accept if the Newton decrement is negligible.
      if (grad.dot(delta) < opt.rel_tol * std::max(1.0, std::abs(fx))) {
        r.converged = true;
        break;
      }
      throw ConvergenceError("Newton line search failed to increase the objective", r.objective_trace);
    }
  }
  if (!r.converged)
    throw ConvergenceError("Newton iterations did not converge within " + std::to_string(opt.max_iter) +
                           " iterations", r.objective_trace);

  r.xi_reduced = x;
  const VectorXd eta = Cr * x;
  const auto sw = score_and_weight(f, y, eta, offset, phi);
  r.weights = sw.w;
  r.grad_norm = (Cr.transpose() * sw.g - Qr * x).cwiseAbs().maxCoeff();
  r.log_lik = log_likelihood(f, y, eta, offset, phi);
  r.quad = x.dot(Qr * x) / scale;
  r.objective = fx;
  MatrixXd H = detail::weighted_gram(Cr, sw.w);
  H += Qr;
  detail::finalize_posterior(r, red, H, null_prec, 1.0);
  return r;
}

/// Cross products of the identified Gaussian design, reusable across lambda.
struct GaussianGram {
  Reduction reduction;
  MatrixXd Cr;
  MatrixXd CtC;
  VectorXd Cty;

  GaussianGram(const DesignSystem& d, const VectorXd& y)
      : reduction(d.layout), Cr(reduction.reduce_cols(d.C)) {
    CtC = detail::weighted_gram(Cr, VectorXd::Ones(Cr.rows()));
    Cty = Cr.transpose() * y;
  }
};

/// Exact conditional posterior for Gaussian responses; the returned
/// covariance uses the posterior mean of tau.
inline LaplaceResult gaussian_conjugate(const DesignSystem& d, const GaussianGram& g, const VectorXd& y,
                                        const VectorXd& lambda) {
  const auto& red = g.reduction;
  const MatrixXd Qr = red.reduced_precision(d, lambda);
  MatrixXd A = g.CtC + Qr;
  Eigen::LLT<MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw NumericalError("C'C + Q is not positive definite; use stronger priors or a larger jitter");

  LaplaceResult r;
  r.xi_reduced = llt.solve(g.Cty);
  const VectorXd resid = y - g.Cr * r.xi_reduced;
  const double rss = resid.squaredNorm();
  r.quad = r.xi_reduced.dot(Qr * r.xi_reduced);
  const double n = static_cast<double>(y.size());
  r.tau = GammaPosterior{0.5 * n, 0.5 * (rss + r.quad)};
  const double tau = r.tau->mean();
  r.weights = VectorXd::Constant(y.size(), tau);
  r.log_lik = y.size() * 0.5 * std::log(tau / (2.0 * M_PI)) - 0.5 * tau * rss;
  r.objective = -0.5 * (rss + r.quad);
  r.converged = true;
  detail::finalize_posterior(r, red, A, red.null_precision(d, lambda), tau);
  return r;
}

inline LaplaceResult gaussian_conjugate(const DesignSystem& d, const VectorXd& y, const VectorXd& lambda) {
  return gaussian_conjugate(d, GaussianGram(d, y), y, lambda);
}

// ---------------------------------------------------------------------------
// Hyperparameters.

struct HyperState {
  VectorXd v;        // log lambda, smooths then spatial
  double v_rho = 0;  // log rho (spatial models)
  double v_phi = 0;  // log phi (negative binomial)
};

/// Sum of the hyperprior and Jacobian terms shared by every family.
inline double hyper_prior_terms(const Layout& layout, const PriorConfig& pr, const VectorXd& v) {
  double val = 0.0;
  for (std::size_t j = 0; j < layout.smooth.size(); ++j)
    val += 0.5 * (static_cast<double>(layout.smooth[j].size) + pr.nu) * v[static_cast<Index>(j)];
  if (layout.has_spatial())
    val += 0.5 * (static_cast<double>(layout.spatial.size) + pr.nu) * v[v.size() - 1];
  for (Index j = 0; j < v.size(); ++j)
    val -= (0.5 * pr.nu + pr.a_delta) * std::log(0.5 * pr.nu * std::exp(v[j]) + pr.b_delta);
  return val;
}

struct HyperEvaluation {
  double value = -std::numeric_limits<double>::infinity();
  bool ok = false;
  std::string failure;
  LaplaceResult laplace;
};

/// Log posterior of (v, v_rho, v_phi); builds designs on demand and caches
/// the latest rho.
class HyperPosterior {
 public:
  explicit HyperPosterior(const DesignBuilder& builder, NewtonOptions newton = {})
      : b_(builder), newton_(newton) {}

  const DesignBuilder& builder() const { return b_; }
  FamilyKind family() const { return b_.spec().family; }
  bool has_rho() const { return b_.layout().has_spatial(); }
  bool has_phi() const { return family() == FamilyKind::NegBinomial; }
  Index num_penalties() const { return b_.spec().num_penalties(); }

  const DesignSystem& design_at(double rho) const {
    if (!cache_ || (has_rho() && cache_rho_ != rho)) {
      cache_ = b_.at(has_rho() ? rho : 1.0);
      cache_rho_ = rho;
      gram_.reset();
    }
    return *cache_;
  }

  double rho_of(const HyperState& s) const { return has_rho() ? std::exp(s.v_rho) : 1.0; }
  double phi_of(const HyperState& s) const { return has_phi() ? std::exp(s.v_phi) : 1.0; }

  /// Evaluates the log posterior; inner failures give -infinity with the reason.
  HyperEvaluation evaluate(const HyperState& s, const VectorXd& warm = {}) const {
    HyperEvaluation ev;
    try {
      const DesignSystem& d = design_at(rho_of(s));
      const VectorXd lambda = s.v.array().exp().matrix();
      const auto& pr = d.priors;
      double val = hyper_prior_terms(d.layout, pr, s.v);
      if (d.layout.has_spatial()) val += 0.5 * d.spatial.log_det_omega;
      if (family() == FamilyKind::Gaussian) {
        if (!gram_) gram_.emplace(d, b_.y());
        ev.laplace = gaussian_conjugate(d, *gram_, b_.y(), lambda);
        const double n = static_cast<double>(b_.n());
        val += -0.5 * n * std::log(2.0 * ev.laplace.tau->rate) - 0.5 * ev.laplace.log_det_precision;
      } else {
        ev.laplace = newton_mode(d, family(), b_.y(), b_.offset(), lambda, phi_of(s), warm, newton_);
        val += ev.laplace.log_lik - 0.5 * ev.laplace.quad - 0.5 * ev.laplace.log_det_precision;
      }
      if (!std::isfinite(val)) throw NumericalError("log posterior is not finite");
      ev.value = val;
      ev.ok = true;
    } catch (const Error& e) {
      ev.failure = std::string(e.kind()) + ": " + e.what();
      ev.value = -std::numeric_limits<double>::infinity();
      ev.ok = false;
    }
    return ev;
  }

 private:
  const DesignBuilder& b_;
  NewtonOptions newton_;
  mutable std::optional<DesignSystem> cache_;
  mutable double cache_rho_ = 0.0;
  mutable std::optional<GaussianGram> gram_;
};

// ---------------------------------------------------------------------------
// Fitting.

struct FitOptions {
  NewtonOptions newton;
  NelderMeadOptions nm;
  double v_lo = -12, v_hi = 12;
  double phi_lo = -7, phi_hi = 12;
  double rho_lo = 0.1, rho_hi = 100;  // multiples of 1 / (max pairwise distance)
  double init_step = 1.0;
  std::optional<VectorXd> v_init;
  std::optional<double> rho_init;
  std::optional<double> phi_init;
  bool optimize = true;  // false: evaluate at the initial state only
};

struct TraceEntry {
  std::vector<double> state;
  double value = 0;
  int inner_iterations = 0;
  Index clamped = 0;
  bool ok = false;
  std::string failure;
};

struct EffectiveDof {
  double total = 0;
  double beta = 0;
  std::vector<double> smooth;
  double spatial = 0;
};

struct FittedModel {
  ModelSpec spec;
  Layout layout;
  Index n = 0;

  // Prediction ingredients.
  std::vector<BSplineBasis> bases;
  std::vector<CenteringTransform> smooth_centering;
  std::vector<VectorXd> smooth_x;  // training covariate values per smooth
  KnotSet knots;
  CoordTransform coord_transform;
  CenteringTransform z_centering;
  double jitter = 0;

  // Hyperparameters at the MAP.
  HyperState hyper;
  VectorXd lambda;
  double rho = 1.0;
  double phi = 0.0;  // negative binomial overdispersion
  std::optional<GammaPosterior> tau;

  Posterior posterior;
  VectorXd eta;  // fitted linear predictor (without offset)
  double log_lik = 0;
  double log_posterior = 0;
  EffectiveDof ed;
  double bic = 0;

  std::vector<TraceEntry> trace;
  int evaluations = 0;
  int newton_iterations = 0;
  Index clamped = 0;
  bool converged = false;
  std::vector<std::string> warnings;

  /// Dispersion argument for the family functions.
  double dispersion() const {
    if (spec.family == FamilyKind::Gaussian) return tau ? tau->mean() : 1.0;
    return spec.family == FamilyKind::NegBinomial ? phi : 1.0;
  }
};

namespace detail {

inline EffectiveDof effective_dof(const Reduction& red, const Posterior& post, const MatrixXd& Cr, const VectorXd& w) {
  const MatrixXd I = weighted_gram(Cr, w);
  const MatrixXd S = post.reduced_covariance();
  const VectorXd diag = (S.array() * I.array()).colwise().sum().transpose();
  EffectiveDof ed;
  ed.beta = diag.segment(red.reduced_beta().start, red.reduced_beta().size).sum();
  for (std::size_t j = 0; j < red.layout().smooth.size(); ++j) {
    const auto& r = red.reduced_smooth(j);
    ed.smooth.push_back(diag.segment(r.start, r.size).sum());
  }
  if (red.layout().has_spatial())
    ed.spatial = diag.segment(red.reduced_spatial().start, red.reduced_spatial().size).sum();
  ed.total = diag.sum();
  return ed;
}

inline double moment_phi(const VectorXd& y, const VectorXd& offset) {
  VectorXd mu;
  if (offset.size() == 0) {
    mu = VectorXd::Constant(y.size(), y.mean());
  } else {
    const VectorXd N = offset.array().exp();
    mu = N * (y.sum() / N.sum());
  }
  const double num = mu.squaredNorm();
  const double den = ((y - mu).array().square() - mu.array()).sum();
  return den > 0.0 ? num / den : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Finalizes a FittedModel from an evaluation at the MAP state.
inline FittedModel assemble_model(const HyperPosterior& hp, const HyperState& s, const HyperEvaluation& ev) {
  const DesignBuilder& b = hp.builder();
  const DesignSystem& d = hp.design_at(hp.rho_of(s));
  FittedModel m;
  m.spec = b.spec();
  m.layout = b.layout();
  m.n = b.n();
  for (const auto& blk : b.smooths()) {
    m.bases.push_back(blk.basis);
    m.smooth_centering.push_back(blk.centering);
    m.smooth_x.push_back(blk.x);
  }
  m.knots = b.knots();
  m.coord_transform = b.coord_transform();
  m.z_centering = d.z_centering;
  m.jitter = d.spatial.jitter;
  m.hyper = s;
  m.lambda = s.v.array().exp().matrix();
  m.rho = hp.rho_of(s);
  m.phi = hp.has_phi() ? hp.phi_of(s) : 0.0;
  m.tau = ev.laplace.tau;
  m.posterior = ev.laplace.posterior;
  m.eta = d.C * m.posterior.mean;
  m.log_lik = ev.laplace.log_lik;
  m.log_posterior = ev.value;
  const Reduction& red = m.posterior.reduction;
  m.ed = detail::effective_dof(red, m.posterior, red.reduce_cols(d.C), ev.laplace.weights);
  m.bic = -2.0 * m.log_lik + m.ed.total * std::log(static_cast<double>(m.n));
  return m;
}

/// MAP fit of the hyperparameters followed by the Laplace posterior at the MAP.
inline FittedModel fit(const DesignBuilder& b, const FitOptions& opt = {}) {
  const HyperPosterior hp(b, opt.newton);
  const Index q = hp.num_penalties();
  const Index dim = q + (hp.has_rho() ? 1 : 0) + (hp.has_phi() ? 1 : 0);
  std::vector<std::string> warnings;

  VectorXd x0(dim), lo(dim), hi(dim), step = VectorXd::Constant(dim, opt.init_step);
  for (Index j = 0; j < q; ++j) {
    x0[j] = opt.v_init ? (*opt.v_init)[j] : 0.0;
    lo[j] = opt.v_lo;
    hi[j] = opt.v_hi;
  }
  Index k = q;
  if (hp.has_rho()) {
    const double maxd = b.max_distance();
    lo[k] = std::log(opt.rho_lo / maxd);
    hi[k] = std::log(opt.rho_hi / maxd);
    x0[k] = std::clamp(std::log(opt.rho_init ? *opt.rho_init : 3.0 / b.median_distance()), lo[k], hi[k]);
    ++k;
  }
  if (hp.has_phi()) {
    lo[k] = opt.phi_lo;
    hi[k] = opt.phi_hi;
    double phi0 = opt.phi_init ? *opt.phi_init : std::max(0.1, detail::moment_phi(b.y(), b.offset()));
    x0[k] = std::clamp(std::log(phi0), lo[k], hi[k] - opt.init_step);
  }
  if (opt.v_init && opt.v_init->size() != q) throw ConfigError("initial log-penalty vector has the wrong length");

  auto unpack = [&](const VectorXd& x) {
    HyperState s;
    s.v = x.head(q);
    Index i = q;
    if (hp.has_rho()) s.v_rho = x[i++];
    if (hp.has_phi()) s.v_phi = x[i++];
    return s;
  };

  std::vector<TraceEntry> trace;
  VectorXd warm;
  auto record = [&](const VectorXd& x, const HyperEvaluation& ev) {
    TraceEntry t;
    t.state.assign(x.data(), x.data() + x.size());
    t.value = ev.value;
    t.ok = ev.ok;
    t.failure = ev.failure;
    t.inner_iterations = ev.laplace.iterations;
    t.clamped = ev.laplace.clamped;
    trace.push_back(std::move(t));
  };
  auto objective = [&](const VectorXd& x) {
    const auto ev = hp.evaluate(unpack(x), warm);
    record(x, ev);
    if (ev.ok) warm = ev.laplace.xi_hat();
    return -ev.value;
  };

  VectorXd best = x0;
  bool converged = true;
  if (opt.optimize && dim > 0) {
    const auto res = nelder_mead(objective, x0, step, lo, hi, opt.nm);
    best = res.x;
    converged = res.converged;
    if (!converged) {
      std::vector<double> values;
      for (const auto& t : trace) values.push_back(t.value);
      throw ConvergenceError("hyperparameter optimization exceeded " + std::to_string(opt.nm.max_evals) +
                                 " evaluations",
                             values, std::vector<double>(best.data(), best.data() + best.size()));
    }
  }

  const HyperState s = unpack(best);
  const auto ev = hp.evaluate(s, warm);
  record(best, ev);
  if (!ev.ok) throw NumericalError("evaluation at the selected hyperparameters failed: " + ev.failure);

  FittedModel m = assemble_model(hp, s, ev);
  m.trace = std::move(trace);
  m.evaluations = static_cast<int>(m.trace.size());
  for (const auto& t : m.trace) {
    m.newton_iterations += t.inner_iterations;
    m.clamped += t.clamped;
  }
  m.converged = converged;
  if (b.knots().duplicates_collapsed > 0)
    warnings.push_back(std::to_string(b.knots().duplicates_collapsed) +
                       " duplicate coordinate pairs collapsed during knot selection");
  if (m.clamped > 0)
    warnings.push_back("linear predictor clamped at +/-" + std::to_string(static_cast<int>(kEtaClamp)) + " " +
                       std::to_string(m.clamped) + " times during fitting");
  m.warnings = std::move(warnings);
  return m;
}

inline FittedModel fit(const ModelSpec& spec, const DataTable& data, const FitOptions& opt = {}) {
  const DesignBuilder b(spec, data);
  return fit(b, opt);
}

}  // namespace geoadd
