#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "geoadd/random.hpp"
#include "geoadd/spatial.hpp"

using namespace geoadd;
using Eigen::Index;
using Eigen::MatrixXd;

namespace {

MatrixXd random_coords(Index n, std::uint64_t seed, double scale = 10.0) {
  Philox rng(seed, 0);
  MatrixXd c(n, 2);
  for (Index i = 0; i < n; ++i) c(i, 0) = scale * rng.uniform(), c(i, 1) = scale * rng.uniform();
  return c;
}

double min_pairwise(const MatrixXd& k) {
  double best = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < k.rows(); ++i)
    for (Index j = i + 1; j < k.rows(); ++j) best = std::min(best, (k.row(i) - k.row(j)).norm());
  return best;
}

}  // namespace

TEST(Kernel, UnitAtZeroDistance) {
  for (auto kind : kAllCovarianceKinds)
    for (double rho : {0.01, 1.0, 37.0}) EXPECT_EQ(kernel_value(kind, rho, 0.0), 1.0) << to_string(kind);
}

TEST(Kernel, ClosedFormValues) {
  EXPECT_EQ(kernel_value(CovarianceKind::Spherical, 2.0, 1.0), 0.0);
  EXPECT_NEAR(kernel_value(CovarianceKind::Matern, 0.5, 2.0), 2.0 * std::exp(-1.0), 1e-15);
  EXPECT_NEAR(kernel_value(CovarianceKind::Matern, 1.0, 1.0), 0.7357588823428847, 1e-15);
  EXPECT_NEAR(kernel_value(CovarianceKind::Exponential, 3.0, 0.5), std::exp(-1.5), 1e-15);
  EXPECT_NEAR(kernel_value(CovarianceKind::Circular, 2.0, 0.5), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(kernel_value(CovarianceKind::Spherical, 1.0, 0.5), 1.0 - 0.75 + 0.0625, 1e-15);
  // Continuity of the spherical kernel at its range.
  EXPECT_NEAR(kernel_value(CovarianceKind::Spherical, 1.0, 1.0 - 1e-9), 0.0, 1e-12);
}

TEST(Kernel, NonIncreasingInDistance) {
  for (auto kind : kAllCovarianceKinds) {
    double prev = 2.0;
    for (int i = 0; i < 1000; ++i) {
      const double v = kernel_value(kind, 1.3, i * 0.005);
      EXPECT_LE(v, prev) << to_string(kind) << " at step " << i;
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      prev = v;
    }
  }
}

TEST(Kernel, DomainErrors) {
  EXPECT_THROW(kernel_value(CovarianceKind::Exponential, 0.0, 1.0), DomainError);
  EXPECT_THROW(kernel_value(CovarianceKind::Exponential, -1.0, 1.0), DomainError);
  EXPECT_THROW(kernel_value(CovarianceKind::Exponential, 1.0, -0.1), DomainError);
  EXPECT_THROW(kernel_matrix(MatrixXd::Zero(2, 2), MatrixXd::Zero(2, 2), CovarianceKind::Matern, 0.0), DomainError);
}

TEST(Kernel, NamesRoundTrip) {
  for (auto kind : kAllCovarianceKinds) EXPECT_EQ(covariance_from_string(to_string(kind)), kind);
  EXPECT_THROW(covariance_from_string("gaussianish"), ConfigError);
}

TEST(Knots, AllSitesWhenSEqualsN) {
  const MatrixXd c = random_coords(12, 4);
  const KnotSet k = select_knots(c, 12, 1);
  std::vector<Index> sites = k.sites;
  std::sort(sites.begin(), sites.end());
  std::vector<Index> all(12);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(sites, all);
}

TEST(Knots, CornersBeatCenterByExhaustiveSearch) {
  MatrixXd c(5, 2);
  c << 0, 0, 1, 0, 0, 1, 1, 1, 0.5, 0.5;
  // Oracle: enumerate the five 4-subsets.
  double best = -1;
  int best_skip = -1;
  for (int skip = 0; skip < 5; ++skip) {
    MatrixXd sub(4, 2);
    for (int i = 0, r = 0; i < 5; ++i)
      if (i != skip) sub.row(r++) = c.row(i);
    const double v = min_pairwise(sub);
    if (v > best) best = v, best_skip = skip;
  }
  ASSERT_EQ(best_skip, 4);
  for (std::uint64_t seed : {1u, 2u, 3u, 99u}) {
    const KnotSet k = select_knots(c, 4, seed);
    std::set<Index> s(k.sites.begin(), k.sites.end());
    EXPECT_EQ(s, (std::set<Index>{0, 1, 2, 3})) << "seed " << seed;
    EXPECT_DOUBLE_EQ(k.criterion_value, best);
  }
}

TEST(Knots, DeterministicGivenSeed) {
  const MatrixXd c = random_coords(300, 8);
  const KnotSet a = select_knots(c, 40, 17), b = select_knots(c, 40, 17);
  EXPECT_EQ(a.sites, b.sites);
  EXPECT_EQ(a.knots, b.knots);
  EXPECT_EQ(a.criterion_value, b.criterion_value);
}

TEST(Knots, SubsetOfSitesDistinctAndCriterionConsistent) {
  const MatrixXd c = random_coords(250, 2);
  const KnotSet k = select_knots(c, 30, 5);
  std::set<Index> s(k.sites.begin(), k.sites.end());
  EXPECT_EQ(s.size(), 30u);
  for (Index a = 0; a < 30; ++a) EXPECT_EQ(k.knots.row(a), c.row(k.sites[a]));
  EXPECT_DOUBLE_EQ(k.criterion_value, min_pairwise(k.knots));
}

TEST(Knots, SwapsNeverDecreaseCriterion) {
  const MatrixXd c = random_coords(200, 6);
  const KnotSet greedy = select_knots(c, 25, 3, 0);
  const KnotSet swapped = select_knots(c, 25, 3, 500);
  EXPECT_GE(swapped.criterion_value, greedy.criterion_value);
}

TEST(Knots, DuplicatesCollapse) {
  MatrixXd c(6, 2);
  c << 0, 0, 0, 0, 1, 0, 1, 0, 0, 1, 1, 1;
  const KnotSet k = select_knots(c, 4, 1);
  EXPECT_EQ(k.duplicates_collapsed, 2);
  EXPECT_GT(k.criterion_value, 0.0);
  EXPECT_THROW(select_knots(c, 5, 1), ConfigError);
}

TEST(Knots, ErrorsOnBadSize) {
  const MatrixXd c = random_coords(5, 1);
  EXPECT_THROW(select_knots(c, 6, 1), ConfigError);
  EXPECT_THROW(select_knots(c, 1, 1), ConfigError);
}

TEST(Knots, DefaultCount) {
  EXPECT_EQ(default_knot_count(10), 10);
  EXPECT_EQ(default_knot_count(50), 20);
  EXPECT_EQ(default_knot_count(300), 75);
  EXPECT_EQ(default_knot_count(301), 76);
  EXPECT_EQ(default_knot_count(100000), 100);
}

TEST(SpatialBasis, ZAtKnotSitesHasUnitEntry) {
  const MatrixXd c = random_coords(60, 3);
  const KnotSet k = select_knots(c, 15, 2);
  const SpatialBasis sb = spatial_basis(c, k, CovarianceKind::Exponential, 0.4);
  for (Index a = 0; a < 15; ++a) EXPECT_EQ(sb.Z(k.sites[a], a), 1.0);
  EXPECT_EQ(sb.Omega.diagonal(), Eigen::VectorXd::Ones(15));
}

TEST(SpatialBasis, TwoKnotsExponentialOffDiagonal) {
  MatrixXd c(2, 2);
  c << 0, 0, 3, 4;
  const KnotSet k = select_knots(c, 2, 1);
  const SpatialBasis sb = spatial_basis(c, k, CovarianceKind::Exponential, 0.3);
  EXPECT_NEAR(sb.Omega(0, 1), std::exp(-1.5), 1e-15);
  EXPECT_EQ(sb.Omega(0, 1), sb.Omega(1, 0));
}

TEST(SpatialBasis, CircularMatchesBruteForceGram) {
  const MatrixXd c = random_coords(40, 12, 2.0);
  const KnotSet k = select_knots(c, 10, 4);
  const double rho = 0.9;
  const SpatialBasis sb = spatial_basis(c, k, CovarianceKind::Circular, rho);
  for (Index a = 0; a < 10; ++a)
    for (Index b = 0; b < 10; ++b) {
      const double dx = k.knots(a, 0) - k.knots(b, 0), dy = k.knots(a, 1) - k.knots(b, 1);
      EXPECT_NEAR(sb.Omega(a, b), std::exp(-rho * rho * (dx * dx + dy * dy)), 1e-14);
    }
}

TEST(SpatialBasis, ZEqualsOmegaWhenKnotsAreSites) {
  const MatrixXd c = random_coords(20, 5);
  const KnotSet k = select_knots(c, 20, 1);
  MatrixXd kc(20, 2);
  for (Index a = 0; a < 20; ++a) kc.row(a) = c.row(k.sites[a]);
  for (auto kind : kAllCovarianceKinds) {
    const SpatialBasis sb = spatial_basis(kc, k, kind, 0.2);
    EXPECT_EQ(sb.Z, sb.Omega) << to_string(kind);
  }
}

TEST(SpatialBasis, OmegaPermutationSymmetry) {
  const MatrixXd c = random_coords(80, 21);
  KnotSet k = select_knots(c, 12, 6);
  const SpatialBasis sb = spatial_basis(c, k, CovarianceKind::Matern, 0.5);
  std::vector<int> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  Philox rng(1, 2);
  for (int i = 11; i > 0; --i) std::swap(perm[i], perm[static_cast<int>(rng.uniform() * (i + 1))]);
  KnotSet kp = k;
  for (int a = 0; a < 12; ++a) kp.knots.row(a) = k.knots.row(perm[a]);
  const SpatialBasis sp = spatial_basis(c, kp, CovarianceKind::Matern, 0.5);
  for (int a = 0; a < 12; ++a)
    for (int b = 0; b < 12; ++b) EXPECT_EQ(sp.Omega(a, b), sb.Omega(perm[a], perm[b]));
  EXPECT_EQ(sb.Omega, sb.Omega.transpose());
  EXPECT_NEAR(sp.log_det_omega, sb.log_det_omega, 1e-9 * std::abs(sb.log_det_omega) + 1e-12);
}

TEST(SpatialBasis, DefaultJitterAndCholeskyFailure) {
  const MatrixXd c = random_coords(30, 7);
  const KnotSet k = select_knots(c, 10, 1);
  const SpatialBasis sb = spatial_basis(c, k, CovarianceKind::Spherical, 0.3);
  EXPECT_DOUBLE_EQ(sb.jitter, 1e-10);
  // Flat kernel, no jitter: the Gram matrix is exactly all ones.
  MatrixXd dense(40, 2);
  for (Index i = 0; i < 40; ++i) dense(i, 0) = 1e-3 * i, dense(i, 1) = 0.0;
  const KnotSet kd = select_knots(dense, 40, 1);
  EXPECT_THROW(spatial_basis(dense, kd, CovarianceKind::Circular, 1e-200, 0.0), NumericalError);
}
