#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "support.hpp"

using namespace geoadd;
using namespace testing_support;

namespace {

Scenario small_scenario() {
  Scenario sc;
  sc.n = 100;
  sc.B = 2;
  sc.grid_m = 20;
  sc.spatial_grid = 6;
  sc.num_basis = 8;
  sc.num_knots = 15;
  sc.pi_samples = 200;
  return sc;
}

std::size_t fields(const std::string& line) { return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1; }

}  // namespace

TEST(ErrorSums, IdentityHasNoBias) {
  ErrorSums e;
  for (double v : {0.3, -2.0, 5.0}) e.add(v, v), e.add_cover(true);
  EXPECT_EQ(e.bias(), 0.0);
  EXPECT_EQ(e.bias_pct(), 0.0);
  EXPECT_EQ(e.coverage(), 100.0);
}

TEST(ErrorSums, HandExample) {
  ErrorSums e;
  e.add(1.0, 0.5);
  e.add(2.0, 2.5);
  e.add(-1.0, -1.0);
  e.add(0.0, 0.3);  // excluded from %Bias only
  EXPECT_NEAR(e.bias(), -0.3 / 4.0, 1e-15);
  EXPECT_NEAR(e.bias_pct(), 25.0, 1e-12);
  EXPECT_EQ(e.excluded, 1);
  e.add_cover(true);
  e.add_cover(false);
  e.add_cover(true);
  e.add_cover(true);
  EXPECT_EQ(e.coverage(), 75.0);
  ErrorSums m;
  m.merge(e);
  m.merge(e);
  EXPECT_EQ(m.bias(), e.bias());
  EXPECT_EQ(m.coverage(), 75.0);
  EXPECT_TRUE(std::isnan(ErrorSums{}.bias()));
}

TEST(Scenario, Surfaces) {
  EXPECT_DOUBLE_EQ(true_surface(SurfaceTag::S1, 3.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(true_surface(SurfaceTag::S2, 1.0, 1.0), 3.0 / 25.0);
  EXPECT_DOUBLE_EQ(true_surface(SurfaceTag::S3, 0.0, 0.0), 0.0);
  EXPECT_THROW(true_surface(SurfaceTag::GRF, 0, 0), ConfigError);
  for (auto s : {SurfaceTag::S1, SurfaceTag::S2, SurfaceTag::S3, SurfaceTag::GRF})
    EXPECT_EQ(surface_from_string(to_string(s)), s);
  EXPECT_EQ(data_kind_from_string("count"), DataKind::Count);
}

TEST(Scenario, ValidationRejectsMismatchedFamilies) {
  Scenario sc = small_scenario();
  sc.fit_family = FamilyKind::Poisson;
  EXPECT_THROW(sc.validate(), ConfigError);
  sc.data = DataKind::Count;
  EXPECT_NO_THROW(sc.validate());
  sc.surface = SurfaceTag::GRF;
  EXPECT_THROW(sc.validate(), ConfigError);
  sc = small_scenario();
  sc.n = 10;
  EXPECT_THROW(sc.validate(), ConfigError);
}

TEST(Scenario, DatasetsDependOnlyOnSeedAndIndex) {
  const Scenario sc = small_scenario();
  const Dataset a = generate_dataset(sc, 1), b = generate_dataset(sc, 1), c = generate_dataset(sc, 0);
  EXPECT_EQ(a.train.column("y"), b.train.column("y"));
  EXPECT_EQ(a.hold_y, b.hold_y);
  EXPECT_NE(a.train.column("y"), c.train.column("y"));
  const VectorXd w = a.train.column("w1");
  EXPECT_GE(w.minCoeff(), -3.0);
  EXPECT_LE(w.maxCoeff(), 3.0);
  EXPECT_EQ(a.hold_coords.rows(), 36);
  for (Index i = 0; i < 100; ++i) {
    const double eta = 3.0 - 0.5 * a.train.column("x1")[i] + true_smooth(a.train.column("x2")[i]) +
                       true_surface(SurfaceTag::S1, w[i], a.train.column("w2")[i]);
    EXPECT_NEAR(a.eta_train[i], eta, 1e-14);
  }
}

TEST(Scenario, ReplicateIsReproducible) {
  const Scenario sc = small_scenario();
  const auto a = run_replicate(sc, 1), b = run_replicate(sc, 1);
  ASSERT_TRUE(a.ok) << a.failure;
  EXPECT_EQ(a.f.err, b.f.err);
  EXPECT_EQ(a.s.abs_pct, b.s.abs_pct);
  EXPECT_EQ(a.mu.err, b.mu.err);
  EXPECT_EQ(a.y.covered, b.y.covered);
  EXPECT_EQ(a.f.n, 20);
  EXPECT_EQ(a.s.n, 36);
  EXPECT_EQ(a.y.n_cover, 36);
}

TEST(Scenario, ThreadCountDoesNotChangeResults) {
  Scenario sc = small_scenario();
  const auto one = simulate(sc);
  sc.threads = 2;
  const auto two = simulate(sc);
  EXPECT_EQ(one.f.err, two.f.err);
  EXPECT_EQ(one.s.covered, two.s.covered);
  EXPECT_EQ(one.y.covered, two.y.covered);
  EXPECT_EQ(one.replicates + one.failed, 2);
}

TEST(Scenario, RandomFieldCovarianceMatchesKernel) {
  Scenario sc;
  sc.surface = SurfaceTag::GRF;
  MatrixXd pts(4, 2);
  pts << 0.1, 0.1, 0.15, 0.1, 0.4, 0.5, 0.9, 0.9;
  const int reps = 4000;
  MatrixXd acc = MatrixXd::Zero(4, 4);
  Philox rng(77, 0);
  for (int r = 0; r < reps; ++r) {
    const VectorXd f = detail::random_field(pts, sc, rng);
    acc += f * f.transpose();
  }
  acc /= reps;
  const std::pair<int, int> probes[] = {{0, 0}, {0, 1}, {0, 2}, {2, 3}};
  for (auto [i, j] : probes) {
    const double truth = 0.5 * kernel_value(sc.kind, 1.0 / 0.15, (pts.row(i) - pts.row(j)).norm());
    // Monte Carlo sd of a covariance estimate is at most sill * sqrt(2 / reps).
    EXPECT_NEAR(acc(i, j), truth, 4.0 * 0.5 * std::sqrt(2.0 / reps)) << i << "," << j;
  }
}

TEST(Scenario, CsvRowMatchesHeader) {
  Scenario sc = small_scenario();
  sc.B = 1;
  const auto rep = simulate(sc);
  const std::string row = report_csv_row(rep);
  EXPECT_EQ(fields(row), fields(report_csv_header()));
  EXPECT_EQ(row.rfind("gaussian,exponential,s1,", 0), 0u);
  sc.surface = SurfaceTag::GRF;
  const std::string grf = report_csv_row(simulate(sc));
  EXPECT_EQ(fields(grf), fields(report_csv_header()));
  EXPECT_NE(grf.find(",NA,NA,"), std::string::npos);
}

TEST(Scenario, SeedsAreDistinct) {
  std::vector<std::uint64_t> s;
  for (std::uint64_t t = 0; t < 1000; ++t) s.push_back(derive_seed(2024, t));
  std::sort(s.begin(), s.end());
  EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
}
