#pragma once

// Low-rank kriging components: stationary covariance kernels, space-filling
// knot selection, and the spatial basis Z(rho) with knot Gram matrix Omega.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "geoadd/error.hpp"
#include "geoadd/random.hpp"

namespace geoadd {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class CovarianceKind { Exponential, Matern, Spherical, Circular };

inline constexpr std::array<CovarianceKind, 4> kAllCovarianceKinds = {
    CovarianceKind::Circular, CovarianceKind::Exponential, CovarianceKind::Matern,
    CovarianceKind::Spherical};

inline std::string to_string(CovarianceKind kind) {
  switch (kind) {
    case CovarianceKind::Exponential: return "exponential";
    case CovarianceKind::Matern: return "matern";
    case CovarianceKind::Spherical: return "spherical";
    case CovarianceKind::Circular: return "circular";
  }
  return "unknown";
}

inline CovarianceKind covariance_from_string(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "exponential" || s == "exp") return CovarianceKind::Exponential;
  if (s == "matern") return CovarianceKind::Matern;
  if (s == "spherical") return CovarianceKind::Spherical;
  if (s == "circular") return CovarianceKind::Circular;
  throw ConfigError("unknown covariance kind '" + std::string(name) +
                    "' (expected circular, exponential, matern or spherical)");
}

namespace detail {

inline double kernel_unchecked(CovarianceKind kind, double rho, double d) {
  const double r = rho * d;
  switch (kind) {
    case CovarianceKind::Exponential: return std::exp(-r);
    case CovarianceKind::Matern: return std::exp(-r) * (1.0 + r);
    case CovarianceKind::Spherical: return r <= 1.0 ? 1.0 - 1.5 * r + 0.5 * r * r * r : 0.0;
    // Squared-exponential form; the name follows the source convention.
    case CovarianceKind::Circular: return std::exp(-r * r);
  }
  return 0.0;
}

inline void check_rho(double rho) {
  if (!(rho > 0.0) || !std::isfinite(rho)) {
    throw DomainError("range-decay parameter rho must be positive and finite (got " +
                      std::to_string(rho) + ")");
  }
}

}  // namespace detail

/// Unit-sill correlation R_rho(d); the sill lives in the spatial penalty.
inline double kernel_value(CovarianceKind kind, double rho, double d) {
  detail::check_rho(rho);
  if (!(d >= 0.0)) throw DomainError("distance must be nonnegative");
  return detail::kernel_unchecked(kind, rho, d);
}

/// Kernel matrix with entries R_rho(||a_i - b_j||) for two-column coordinate sets.
inline MatrixXd kernel_matrix(const MatrixXd& a, const MatrixXd& b, CovarianceKind kind,
                              double rho) {
  detail::check_rho(rho);
  MatrixXd K(a.rows(), b.rows());
  for (Index j = 0; j < b.rows(); ++j) {
    const double bx = b(j, 0), by = b(j, 1);
    for (Index i = 0; i < a.rows(); ++i) {
      const double d = std::hypot(a(i, 0) - bx, a(i, 1) - by);
      K(i, j) = detail::kernel_unchecked(kind, rho, d);
    }
  }
  return K;
}

/// Default knot count: min(ceil(n / 4), 100), at least 20, or n when n < 20.
inline int default_knot_count(Index n) {
  if (n < 20) return static_cast<int>(n);
  const Index quarter = (n + 3) / 4;
  return static_cast<int>(std::max<Index>(20, std::min<Index>(quarter, 100)));
}

struct KnotSet {
  MatrixXd knots;             // S x 2
  std::vector<Index> sites;   // row index of each knot in the input coordinates
  std::uint64_t seed = 0;
  double criterion_value = 0.0;  // minimum pairwise knot distance
  Index duplicates_collapsed = 0;

  Index size() const { return knots.rows(); }
};

/// Greedy maximin selection of S observed sites, refined by point swaps.
///
/// Each swap attempt draws a random non-selected site and tries it in place
/// of either endpoint of the current closest knot pair; the swap is kept only
/// when the minimum pairwise distance strictly increases. `swaps < 0` means
/// 10 * S attempts.
inline KnotSet select_knots(const MatrixXd& coords, int S, std::uint64_t seed, int swaps = -1) {
  if (coords.cols() != 2) throw DataError("knot selection expects two coordinate columns");
  const Index n = coords.rows();
  if (S < 2) throw ConfigError("at least 2 knots are required");
  if (S > n) {
    throw ConfigError("requested " + std::to_string(S) + " knots but only " +
                      std::to_string(n) + " sites are available");
  }
  if (!coords.allFinite()) throw DataError("coordinates must be finite");
  if (swaps < 0) swaps = 10 * S;

  // Collapse duplicate sites, keeping the first occurrence (stable sort keeps
  // equal sites in index order).
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (coords(a, 0) != coords(b, 0)) return coords(a, 0) < coords(b, 0);
    return coords(a, 1) < coords(b, 1);
  });
  std::vector<char> duplicate(static_cast<std::size_t>(n), 0);
  for (std::size_t k = 1; k < order.size(); ++k) {
    const Index a = order[k - 1], b = order[k];
    if (coords(a, 0) == coords(b, 0) && coords(a, 1) == coords(b, 1))
      duplicate[static_cast<std::size_t>(b)] = 1;
  }
  std::vector<Index> distinct;
  for (Index i = 0; i < n; ++i)
    if (!duplicate[static_cast<std::size_t>(i)]) distinct.push_back(i);
  const Index m = static_cast<Index>(distinct.size());
  if (S > m) {
    throw ConfigError("requested " + std::to_string(S) + " knots but only " +
                      std::to_string(m) + " distinct sites are available");
  }

  auto dist = [&](Index i, Index j) {
    return std::hypot(coords(distinct[i], 0) - coords(distinct[j], 0),
                      coords(distinct[i], 1) - coords(distinct[j], 1));
  };

  Philox rng(seed);
  std::vector<Index> sel;
  std::vector<char> chosen(static_cast<std::size_t>(m), 0);
  if (S == m) {
    for (Index i = 0; i < m; ++i) sel.push_back(i);
  } else {
    Index first = std::min<Index>(static_cast<Index>(rng.uniform() * m), m - 1);
    sel.push_back(first);
    chosen[first] = 1;
    std::vector<double> nearest(static_cast<std::size_t>(m), std::numeric_limits<double>::infinity());
    while (static_cast<int>(sel.size()) < S) {
      const Index last = sel.back();
      Index best = -1;
      double best_d = -1.0;
      for (Index i = 0; i < m; ++i) {
        if (chosen[i]) continue;
        nearest[i] = std::min(nearest[i], dist(i, last));
        if (nearest[i] > best_d) best_d = nearest[i], best = i;
      }
      sel.push_back(best);
      chosen[best] = 1;
    }
  }

  // Pairwise distances among the selected knots with first/second nearest neighbours.
  MatrixXd D(S, S);
  for (int a = 0; a < S; ++a)
    for (int b = 0; b < S; ++b) D(a, b) = a == b ? std::numeric_limits<double>::infinity() : dist(sel[a], sel[b]);

  std::vector<double> nn1(S), nn2(S);
  std::vector<int> arg1(S);
  auto refresh = [&]() {
    for (int a = 0; a < S; ++a) {
      nn1[a] = nn2[a] = std::numeric_limits<double>::infinity();
      arg1[a] = -1;
      for (int b = 0; b < S; ++b) {
        const double d = D(a, b);
        if (d < nn1[a]) nn2[a] = nn1[a], nn1[a] = d, arg1[a] = b;
        else if (d < nn2[a]) nn2[a] = d;
      }
    }
  };
  auto current_min = [&](int& ia) {
    double best = std::numeric_limits<double>::infinity();
    ia = 0;
    for (int a = 0; a < S; ++a)
      if (nn1[a] < best) best = nn1[a], ia = a;
    return best;
  };
  refresh();

  std::vector<Index> pool;
  for (Index i = 0; i < m; ++i)
    if (!chosen[i]) pool.push_back(i);

  for (int attempt = 0; attempt < swaps && !pool.empty(); ++attempt) {
    int ia = 0;
    const double cur = current_min(ia);
    const int ib = arg1[ia];
    const std::size_t pick =
        std::min(static_cast<std::size_t>(rng.uniform() * static_cast<double>(pool.size())),
                 pool.size() - 1);
    const Index cand = pool[pick];

    int best_k = -1;
    double best_val = cur;
    for (int k : {ia, ib}) {
      double others = std::numeric_limits<double>::infinity();
      for (int a = 0; a < S; ++a) {
        if (a == k) continue;
        others = std::min(others, arg1[a] == k ? nn2[a] : nn1[a]);
      }
      double to_cand = std::numeric_limits<double>::infinity();
      for (int a = 0; a < S; ++a)
        if (a != k) to_cand = std::min(to_cand, dist(cand, sel[a]));
      const double val = std::min(others, to_cand);
      if (val > best_val) best_val = val, best_k = k;
    }
    if (best_k < 0) continue;

    pool[pick] = sel[best_k];
    sel[best_k] = cand;
    for (int a = 0; a < S; ++a) {
      if (a == best_k) continue;
      D(a, best_k) = D(best_k, a) = dist(sel[a], cand);
    }
    refresh();
  }

  KnotSet out;
  out.seed = seed;
  out.duplicates_collapsed = n - m;
  out.knots.resize(S, 2);
  out.sites.resize(static_cast<std::size_t>(S));
  for (int a = 0; a < S; ++a) {
    out.sites[a] = distinct[sel[a]];
    out.knots.row(a) = coords.row(distinct[sel[a]]);
  }
  int ia = 0;
  out.criterion_value = current_min(ia);
  return out;
}

/// Low-rank spatial basis at a fixed rho.
struct SpatialBasis {
  MatrixXd Z;      // n x S, R_rho(w_i - kappa_s)
  MatrixXd Omega;  // S x S, R_rho(kappa_s - kappa_s'), without jitter
  double rho = 1.0;
  double jitter = 0.0;
  CovarianceKind kind = CovarianceKind::Exponential;
  double log_det_omega = 0.0;  // log|Omega + jitter I|

  MatrixXd omega_jittered() const {
    MatrixXd O = Omega;
    O.diagonal().array() += jitter;
    return O;
  }
};

inline double default_jitter(const MatrixXd& omega) { return 1e-10 * omega.diagonal().mean(); }

/// Builds Z and Omega; `jitter < 0` selects the default 1e-10 * mean(diag(Omega)).
inline SpatialBasis spatial_basis(const MatrixXd& coords, const KnotSet& knots,
                                  CovarianceKind kind, double rho, double jitter = -1.0) {
  SpatialBasis sb;
  sb.kind = kind;
  sb.rho = rho;
  sb.Z = kernel_matrix(coords, knots.knots, kind, rho);
  sb.Omega = kernel_matrix(knots.knots, knots.knots, kind, rho);
  sb.jitter = jitter < 0.0 ? default_jitter(sb.Omega) : jitter;
  Eigen::LLT<MatrixXd> llt(sb.omega_jittered());
  if (llt.info() != Eigen::Success) {
    throw NumericalError("Cholesky of the knot Gram matrix failed at rho = " +
                         std::to_string(rho) + "; increase the jitter or use fewer knots");
  }
  sb.log_det_omega = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return sb;
}

}  // namespace geoadd
