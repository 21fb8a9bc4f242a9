#pragma once

// Model specification and assembly of the global design matrix
// C = [X : B_1 : ... : B_q : Z(rho)] with its block precision Q.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "geoadd/error.hpp"
#include "geoadd/family.hpp"
#include "geoadd/spatial.hpp"
#include "geoadd/splines.hpp"
#include "geoadd/table.hpp"

namespace geoadd {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct PriorConfig {
  double zeta = 1e-5;     // beta prior precision
  double nu = 3.0;
  double a_delta = 1e-5;
  double b_delta = 1e-5;

  void validate() const {
    if (!(zeta > 0 && nu > 0 && a_delta > 0 && b_delta > 0))
      throw ConfigError("prior parameters zeta, nu, a_delta, b_delta must be positive");
  }
};

struct SmoothSpec {
  std::string name;
  int num_basis = 15;
  int degree = 3;
  int penalty_order = 2;
  double ridge = 1e-12;
};

struct SpatialSpec {
  bool include = false;
  std::string x_col = "x";
  std::string y_col = "y";
  CovarianceKind kind = CovarianceKind::Exponential;
  int num_knots = 0;  // 0 selects the default count
  std::uint64_t seed = 1;
  int swaps = -1;
  double jitter = -1.0;  // < 0 selects 1e-10 * mean(diag(Omega))
  bool standardize = false;
};

struct ModelSpec {
  FamilyKind family = FamilyKind::Gaussian;
  std::string response;
  std::vector<std::string> linear;
  std::vector<SmoothSpec> smooths;
  SpatialSpec spatial;
  PriorConfig priors;
  std::string offset;  // column holding N_i (log taken internally); empty for none

  void validate() const {
    priors.validate();
    if (response.empty()) throw ConfigError("model spec needs a response column");
    std::set<std::string> seen;
    auto add = [&](const std::string& n) {
      if (n.empty()) throw ConfigError("empty covariate name");
      if (!seen.insert(n).second) throw DataError("column '" + n + "' is used more than once");
    };
    add(response);
    for (const auto& l : linear) add(l);
    for (const auto& s : smooths) add(s.name);
    if (spatial.include) add(spatial.x_col), add(spatial.y_col);
    if (!offset.empty()) add(offset);
    if (!offset.empty() && family == FamilyKind::Gaussian)
      throw ConfigError("offsets are only supported for count families");
  }

  /// Number of penalized blocks: q smooths plus the spatial block.
  Index num_penalties() const {
    return static_cast<Index>(smooths.size()) + (spatial.include ? 1 : 0);
  }
};

struct BlockRange {
  Index start = 0;
  Index size = 0;
  Index end() const { return start + size; }
};

struct Layout {
  BlockRange beta;
  std::vector<BlockRange> smooth;
  BlockRange spatial;
  std::vector<std::string> beta_names;
  Index total = 0;

  bool has_spatial() const { return spatial.size > 0; }
};

/// Affine map applied to raw coordinates before any distance computation.
struct CoordTransform {
  double cx = 0.0, cy = 0.0, scale = 1.0;

  MatrixXd apply(const MatrixXd& w) const {
    MatrixXd out(w.rows(), 2);
    out.col(0) = (w.col(0).array() - cx) / scale;
    out.col(1) = (w.col(1).array() - cy) / scale;
    return out;
  }
};

struct SmoothBlock {
  std::string name;
  BSplineBasis basis;
  CenteringTransform centering;
  PenaltyMatrix penalty;
  MatrixXd B;  // centered training basis, n x K
  VectorXd x;  // training covariate values
};

/// Everything at a fixed rho.
struct DesignSystem {
  MatrixXd C;
  Layout layout;
  std::vector<PenaltyMatrix> penalties;  // one per smooth
  SpatialBasis spatial;                  // empty matrices when no spatial block
  CenteringTransform z_centering;
  PriorConfig priors;

  Index num_penalties() const {
    return static_cast<Index>(penalties.size()) + (layout.has_spatial() ? 1 : 0);
  }

  void check_lambda(const VectorXd& lambda) const {
    if (lambda.size() != num_penalties()) {
      throw ConfigError("expected " + std::to_string(num_penalties()) + " penalty parameters, got " +
                        std::to_string(lambda.size()));
    }
    for (Index j = 0; j < lambda.size(); ++j)
      if (!(lambda[j] > 0.0) || !std::isfinite(lambda[j]))
        throw DomainError("penalty parameter lambda_" + std::to_string(j + 1) + " must be positive");
  }

  /// Q = blkdiag(zeta I, lambda_1 P, ..., lambda_q P, lambda_{q+1} (Omega + jitter I)).
  MatrixXd precision(const VectorXd& lambda) const {
    check_lambda(lambda);
    MatrixXd Q = MatrixXd::Zero(layout.total, layout.total);
    Q.block(layout.beta.start, layout.beta.start, layout.beta.size, layout.beta.size).diagonal().setConstant(priors.zeta);
    for (std::size_t j = 0; j < penalties.size(); ++j) {
      const auto& r = layout.smooth[j];
      Q.block(r.start, r.start, r.size, r.size) = lambda[static_cast<Index>(j)] * penalties[j].P;
    }
    if (layout.has_spatial()) {
      const auto& r = layout.spatial;
      Q.block(r.start, r.start, r.size, r.size) = lambda[lambda.size() - 1] * spatial.omega_jittered();
    }
    return Q;
  }

  double precision_log_det(const VectorXd& lambda) const {
    check_lambda(lambda);
    double ld = static_cast<double>(layout.beta.size) * std::log(priors.zeta);
    for (std::size_t j = 0; j < penalties.size(); ++j)
      ld += static_cast<double>(penalties[j].size()) * std::log(lambda[static_cast<Index>(j)]) + penalties[j].log_det;
    if (layout.has_spatial())
      ld += static_cast<double>(layout.spatial.size) * std::log(lambda[lambda.size() - 1]) + spatial.log_det_omega;
    return ld;
  }
};

namespace detail {

inline double max_pairwise_distance(const MatrixXd& w) {
  const Index n = w.rows();
  if (n > 4000) {
    // Bounding-box diagonal: an upper bound that avoids the quadratic scan.
    const double dx = w.col(0).maxCoeff() - w.col(0).minCoeff();
    const double dy = w.col(1).maxCoeff() - w.col(1).minCoeff();
    return std::hypot(dx, dy);
  }
  double best = 0.0;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      best = std::max(best, std::hypot(w(i, 0) - w(j, 0), w(i, 1) - w(j, 1)));
  return best;
}

// Median over all pairs of a strided subsample of at most 500 sites.
inline double median_pairwise_distance(const MatrixXd& w) {
  const Index n = w.rows();
  const Index step = std::max<Index>(1, (n + 499) / 500);
  std::vector<double> d;
  for (Index i = 0; i < n; i += step)
    for (Index j = i + step; j < n; j += step)
      d.push_back(std::hypot(w(i, 0) - w(j, 0), w(i, 1) - w(j, 1)));
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<long>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

}  // namespace detail

/// Holds the rho-independent parts of the design and produces DesignSystems.
class DesignBuilder {
 public:
  DesignBuilder(ModelSpec spec, const DataTable& data) : spec_(std::move(spec)) {
    spec_.validate();
    const Index n = data.rows();
    if (n < 2) throw DataError("need at least two observations");

    y_ = data.column(spec_.response);
    validate_response(spec_.family, y_);
    if (!spec_.offset.empty()) {
      const VectorXd N = data.column(spec_.offset);
      if ((N.array() <= 0.0).any()) throw DataError("offset column '" + spec_.offset + "' must be positive");
      offset_ = N.array().log().matrix();
    }

    // Fixed-effect columns: intercept, linear covariates, coordinates.
    layout_.beta_names.push_back("(Intercept)");
    for (const auto& l : spec_.linear) layout_.beta_names.push_back(l);
    if (spec_.spatial.include) {
      layout_.beta_names.push_back(spec_.spatial.x_col);
      layout_.beta_names.push_back(spec_.spatial.y_col);
    }
    const Index pb = static_cast<Index>(layout_.beta_names.size());
    X_.resize(n, pb);
    X_.col(0).setOnes();
    for (std::size_t k = 0; k < spec_.linear.size(); ++k) X_.col(static_cast<Index>(k) + 1) = data.column(spec_.linear[k]);

    if (spec_.spatial.include) {
      MatrixXd raw(n, 2);
      raw.col(0) = data.column(spec_.spatial.x_col);
      raw.col(1) = data.column(spec_.spatial.y_col);
      if (spec_.spatial.standardize) {
        coord_tr_.cx = raw.col(0).mean();
        coord_tr_.cy = raw.col(1).mean();
        const double vx = (raw.col(0).array() - coord_tr_.cx).square().mean();
        const double vy = (raw.col(1).array() - coord_tr_.cy).square().mean();
        coord_tr_.scale = std::sqrt(0.5 * (vx + vy));
        if (!(coord_tr_.scale > 0.0)) throw DataError("coordinates have zero spread");
      }
      coords_ = coord_tr_.apply(raw);
      X_.col(pb - 2) = coords_.col(0);
      X_.col(pb - 1) = coords_.col(1);
      const int S = spec_.spatial.num_knots > 0 ? spec_.spatial.num_knots : default_knot_count(n);
      knots_ = select_knots(coords_, S, spec_.spatial.seed, spec_.spatial.swaps);
      max_distance_ = detail::max_pairwise_distance(coords_);
      median_distance_ = detail::median_pairwise_distance(coords_);
      if (!(max_distance_ > 0.0)) throw DataError("all spatial coordinates coincide");
    }

    layout_.beta = {0, pb};
    Index pos = pb;
    for (const auto& s : spec_.smooths) {
      const VectorXd x = data.column(s.name);
      const double lo = x.minCoeff(), hi = x.maxCoeff();
      if (!(lo < hi)) throw DataError("smooth covariate '" + s.name + "' is constant");
      SmoothBlock blk;
      blk.name = s.name;
      blk.basis = BSplineBasis::uniform(lo, hi, s.num_basis, s.degree);
      blk.penalty = difference_penalty(s.num_basis, s.penalty_order, s.ridge);
      auto [Bc, tr] = center_columns(bspline_basis(x, blk.basis));
      blk.B = std::move(Bc);
      blk.centering = std::move(tr);
      blk.x = x;
      layout_.smooth.push_back({pos, s.num_basis});
      pos += s.num_basis;
      smooths_.push_back(std::move(blk));
    }
    if (spec_.spatial.include) {
      layout_.spatial = {pos, knots_.size()};
      pos += knots_.size();
    } else {
      layout_.spatial = {pos, 0};
    }
    layout_.total = pos;
    if (!X_.allFinite()) throw DataError("linear covariates contain non-finite values");
  }

  DesignSystem at(double rho) const {
    DesignSystem d;
    d.layout = layout_;
    d.priors = spec_.priors;
    d.C.resize(y_.size(), layout_.total);
    d.C.leftCols(layout_.beta.size) = X_;
    for (std::size_t j = 0; j < smooths_.size(); ++j) {
      d.C.middleCols(layout_.smooth[j].start, layout_.smooth[j].size) = smooths_[j].B;
      d.penalties.push_back(smooths_[j].penalty);
    }
    if (layout_.has_spatial()) {
      d.spatial = spatial_basis(coords_, knots_, spec_.spatial.kind, rho, spec_.spatial.jitter);
      auto [Zc, tr] = center_columns(d.spatial.Z);
      d.C.middleCols(layout_.spatial.start, layout_.spatial.size) = Zc;
      d.z_centering = std::move(tr);
    }
    return d;
  }

  const ModelSpec& spec() const { return spec_; }
  const Layout& layout() const { return layout_; }
  const VectorXd& y() const { return y_; }
  const VectorXd& offset() const { return offset_; }
  const MatrixXd& X() const { return X_; }
  const MatrixXd& coords() const { return coords_; }
  const KnotSet& knots() const { return knots_; }
  const std::vector<SmoothBlock>& smooths() const { return smooths_; }
  const CoordTransform& coord_transform() const { return coord_tr_; }
  double max_distance() const { return max_distance_; }
  double median_distance() const { return median_distance_; }
  Index n() const { return y_.size(); }

 private:
  ModelSpec spec_;
  VectorXd y_, offset_;
  MatrixXd X_, coords_;
  KnotSet knots_;
  CoordTransform coord_tr_;
  std::vector<SmoothBlock> smooths_;
  Layout layout_;
  double max_distance_ = 0.0, median_distance_ = 0.0;
};

/// Convenience wrapper: builds the design for `spec` and `data` at `rho`.
inline DesignSystem build_design(const ModelSpec& spec, const DataTable& data, double rho) {
  return DesignBuilder(spec, data).at(rho);
}

}  // namespace geoadd
