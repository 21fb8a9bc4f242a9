#pragma once

// Response families: full normalized log-likelihoods and per-observation
// score/weight vectors on the linear-predictor scale.

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <string_view>

#include "geoadd/error.hpp"

namespace geoadd {

using Eigen::Index;
using Eigen::VectorXd;

enum class FamilyKind { Gaussian, Poisson, NegBinomial };

inline std::string to_string(FamilyKind f) {
  switch (f) {
    case FamilyKind::Gaussian: return "gaussian";
    case FamilyKind::Poisson: return "poisson";
    case FamilyKind::NegBinomial: return "negbin";
  }
  return "unknown";
}

inline FamilyKind family_from_string(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "gaussian" || s == "normal") return FamilyKind::Gaussian;
  if (s == "poisson") return FamilyKind::Poisson;
  if (s == "negbin" || s == "nb" || s == "negative_binomial" || s == "negbinomial")
    return FamilyKind::NegBinomial;
  throw ConfigError("unknown family '" + std::string(name) +
                    "' (expected gaussian, poisson or negbin)");
}

inline bool is_count(FamilyKind f) { return f != FamilyKind::Gaussian; }

/// Log-mean values beyond this bound are clamped before exponentiation.
inline constexpr double kEtaClamp = 30.0;

/// Per-observation first derivative g = dl/deta and weight w = -d2l/deta2.
struct ScoreWeight {
  VectorXd g;
  VectorXd w;
  Index clamped = 0;
};

namespace detail {

inline double offset_at(const VectorXd& offset, Index i) {
  return offset.size() == 0 ? 0.0 : offset[i];
}

inline double clamp_eta(double e, Index& clamped) {
  if (e > kEtaClamp) return ++clamped, kEtaClamp;
  if (e < -kEtaClamp) return ++clamped, -kEtaClamp;
  return e;
}

inline void check_sizes(const VectorXd& y, const VectorXd& eta, const VectorXd& offset) {
  if (y.size() != eta.size()) throw DataError("response and linear predictor differ in length");
  if (offset.size() != 0 && offset.size() != y.size())
    throw DataError("offset length does not match the response");
}

// log Gamma(y + phi) - log Gamma(phi) - y log(phi), stable for large phi.
inline double nb_gamma_ratio(double y, double phi) {
  if (y < 256.0) {
    double s = 0.0;
    for (int k = 1; k < static_cast<int>(y); ++k) s += std::log1p(k / phi);
    return s;
  }
  return std::lgamma(y + phi) - std::lgamma(phi) - y * std::log(phi);
}

}  // namespace detail

/// Rejects responses that are invalid for the family (non-finite, negative or
/// non-integer counts).
inline void validate_response(FamilyKind f, const VectorXd& y) {
  for (Index i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i])) throw DataError("response value at row " + std::to_string(i) + " is not finite");
    if (is_count(f) && (y[i] < 0.0 || y[i] != std::floor(y[i]))) {
      throw DataError("count response at row " + std::to_string(i) +
                      " is not a nonnegative integer (" + std::to_string(y[i]) + ")");
    }
  }
}

inline void check_dispersion(FamilyKind f, double phi) {
  if (f != FamilyKind::Poisson && !(phi > 0.0 && std::isfinite(phi))) {
    throw DomainError(f == FamilyKind::Gaussian ? "noise precision must be positive"
                                                : "overdispersion phi must be positive");
  }
}

/// Full log-likelihood. `offset` holds log N_i (may be empty). For the
/// Gaussian family `phi` is the noise precision tau and the mean is eta + offset.
inline double log_likelihood(FamilyKind f, const VectorXd& y, const VectorXd& eta,
                             const VectorXd& offset, double phi, Index* clamped = nullptr) {
  detail::check_sizes(y, eta, offset);
  check_dispersion(f, phi);
  Index nclamp = 0;
  double ll = 0.0;
  switch (f) {
    case FamilyKind::Gaussian: {
      const double c = 0.5 * std::log(phi / (2.0 * M_PI));
      for (Index i = 0; i < y.size(); ++i) {
        const double r = y[i] - eta[i] - detail::offset_at(offset, i);
        ll += c - 0.5 * phi * r * r;
      }
      break;
    }
    case FamilyKind::Poisson:
      for (Index i = 0; i < y.size(); ++i) {
        const double le = detail::clamp_eta(eta[i] + detail::offset_at(offset, i), nclamp);
        ll += y[i] * le - std::exp(le) - std::lgamma(y[i] + 1.0);
      }
      break;
    case FamilyKind::NegBinomial:
      for (Index i = 0; i < y.size(); ++i) {
        const double le = detail::clamp_eta(eta[i] + detail::offset_at(offset, i), nclamp);
        const double mu = std::exp(le);
        ll += detail::nb_gamma_ratio(y[i], phi) + y[i] * le -
              (y[i] + phi) * std::log1p(mu / phi) - std::lgamma(y[i] + 1.0);
      }
      break;
  }
  if (clamped) *clamped += nclamp;
  return ll;
}

inline ScoreWeight score_and_weight(FamilyKind f, const VectorXd& y, const VectorXd& eta,
                                    const VectorXd& offset, double phi) {
  detail::check_sizes(y, eta, offset);
  check_dispersion(f, phi);
  ScoreWeight sw;
  sw.g.resize(y.size());
  sw.w.resize(y.size());
  for (Index i = 0; i < y.size(); ++i) {
    const double o = detail::offset_at(offset, i);
    switch (f) {
      case FamilyKind::Gaussian:
        sw.g[i] = phi * (y[i] - eta[i] - o);
        sw.w[i] = phi;
        break;
      case FamilyKind::Poisson: {
        const double mu = std::exp(detail::clamp_eta(eta[i] + o, sw.clamped));
        sw.g[i] = y[i] - mu;
        sw.w[i] = mu;
        break;
      }
      case FamilyKind::NegBinomial: {
        const double mu = std::exp(detail::clamp_eta(eta[i] + o, sw.clamped));
        const double d = phi + mu;
        sw.g[i] = phi * (y[i] - mu) / d;
        sw.w[i] = phi * mu * (phi + y[i]) / (d * d);
        break;
      }
    }
  }
  return sw;
}

}  // namespace geoadd
