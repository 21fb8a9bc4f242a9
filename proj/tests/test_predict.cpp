#include <gtest/gtest.h>

#include "support.hpp"

using namespace geoadd;
using namespace testing_support;

namespace {

const FittedModel& gaussian_model() {
  static const FittedModel m = fit(toy_spec(FamilyKind::Gaussian, 8, 12), toy_table(150, 41));
  return m;
}

const FittedModel& poisson_model() {
  static const FittedModel m = fit(toy_spec(FamilyKind::Poisson, 8, 12), toy_table(150, 42, FamilyKind::Poisson));
  return m;
}

}  // namespace

TEST(Predict, ReproducesFittedPredictorAtTrainingPoints) {
  const auto t = toy_table(150, 41);
  const auto& m = gaussian_model();
  const auto r = predict(m, NewPoints::from_table(m, t), {0.95, 50, 1});
  EXPECT_LT(max_abs(r.eta - m.eta), 1e-10);
  EXPECT_EQ(r.mean, r.eta);
}

TEST(Predict, OffsetScalesMeanAndInterval) {
  const auto t = new_points(10, 43, FamilyKind::Poisson);
  const auto& m = poisson_model();
  NewPoints p = NewPoints::from_table(m, t);
  const auto a = predict(m, p, {0.9, 20, 3});
  p.N = VectorXd::Constant(10, 2.5);
  const auto b = predict(m, p, {0.9, 20, 3});
  EXPECT_LT(max_abs(b.mean - 2.5 * a.mean), 1e-12 * max_abs(b.mean));
  EXPECT_LT(max_abs(b.ci_lo - 2.5 * a.ci_lo), 1e-12 * max_abs(b.ci_hi));
  EXPECT_LT(max_abs(b.ci_hi - 2.5 * a.ci_hi), 1e-12 * max_abs(b.ci_hi));
}

TEST(Predict, NormalQuantile) {
  EXPECT_NEAR(detail::z_value(0.95), 1.959963984540054, 1e-12);
  EXPECT_NEAR(normal_quantile(0.5), 0.0, 1e-15);
  EXPECT_THROW(detail::z_value(1.0), DomainError);
  EXPECT_THROW(detail::z_value(0.0), DomainError);
}

TEST(Predict, Quantile7) {
  const std::vector<double> s{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(detail::quantile7(s, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(detail::quantile7(s, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(detail::quantile7(s, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(detail::quantile7(s, 0.1), 1.3);
}

TEST(Predict, IntervalsAreSeedDeterministic) {
  const auto t = new_points(8, 44);
  const auto& m = gaussian_model();
  const auto p = NewPoints::from_table(m, t);
  const auto a = predict(m, p, {0.95, 200, 7}), b = predict(m, p, {0.95, 200, 7}), c = predict(m, p, {0.95, 200, 8});
  EXPECT_EQ(a.pi_lo, b.pi_lo);
  EXPECT_EQ(a.pi_hi, b.pi_hi);
  EXPECT_NE(a.pi_lo, c.pi_lo);
}

TEST(Predict, GaussianIntervalMatchesAnalyticWidth) {
  const auto t = new_points(3, 45);
  const auto& m = gaussian_model();
  const auto r = predict(m, NewPoints::from_table(m, t), {0.95, 100000, 9});
  for (Index i = 0; i < 3; ++i) {
    const double sd = std::sqrt(r.eta_sd[i] * r.eta_sd[i] + 1.0 / m.tau->mean());
    const double width = 2.0 * 1.959963984540054 * sd;
    EXPECT_NEAR(r.pi_hi[i] - r.pi_lo[i], width, 0.01 * width);
    EXPECT_NEAR(0.5 * (r.pi_hi[i] + r.pi_lo[i]), r.eta[i], 0.01 * sd);
  }
}

TEST(Predict, TinyPoissonMeanGivesZeroInterval) {
  const auto& m = poisson_model();
  PredictionResult r;
  r.eta = VectorXd::Constant(3, std::log(0.01));
  r.eta_sd = VectorXd::Zero(3);
  predict_interval(m, r, VectorXd(), {0.95, 1000, 5});
  EXPECT_EQ(r.pi_lo, VectorXd::Zero(3));
  EXPECT_EQ(r.pi_hi, VectorXd::Zero(3));
}

TEST(Predict, CountIntervalsAreIntegers) {
  const auto t = new_points(20, 46, FamilyKind::Poisson);
  const auto& m = poisson_model();
  const auto r = predict(m, NewPoints::from_table(m, t), {0.9, 300, 2});
  for (Index i = 0; i < 20; ++i) {
    EXPECT_EQ(r.pi_lo[i], std::floor(r.pi_lo[i]));
    EXPECT_EQ(r.pi_hi[i], std::floor(r.pi_hi[i]));
    EXPECT_LE(r.pi_lo[i], r.pi_hi[i]);
    EXPECT_GE(r.pi_lo[i], 0.0);
  }
}

TEST(Predict, WidthsGrowWithLevel) {
  const auto t = new_points(10, 47);
  const auto& m = gaussian_model();
  const auto p = NewPoints::from_table(m, t);
  PredictionResult prev;
  bool first = true;
  for (double level : {0.5, 0.8, 0.95, 0.99}) {
    const auto r = predict(m, p, {level, 500, 4});
    if (!first) {
      EXPECT_TRUE(((r.ci_hi - r.ci_lo).array() > (prev.ci_hi - prev.ci_lo).array()).all());
      EXPECT_TRUE(((r.pi_hi - r.pi_lo).array() >= (prev.pi_hi - prev.pi_lo).array()).all());
    }
    prev = r;
    first = false;
  }
}

TEST(Predict, CurveIsCenteredOverTrainingValues) {
  const auto& m = gaussian_model();
  const auto c = smooth_curve(m, "x2", m.smooth_x[0]);
  EXPECT_NEAR(c.fit.mean(), 0.0, 1e-10);
  EXPECT_TRUE((c.lo.array() <= c.fit.array()).all());
  EXPECT_TRUE((c.hi.array() >= c.fit.array()).all());
  EXPECT_THROW(smooth_curve(m, "nope", m.smooth_x[0]), RequestError);
}

TEST(Predict, QuadFormDiagMatchesDenseCovariance) {
  const auto& m = gaussian_model();
  const auto t = new_points(15, 48);
  const MatrixXd rows = predictor_rows(m, NewPoints::from_table(m, t));
  // Row by row: map each row into identified coordinates by explicit dot
  // products with the columns of T, then add the dropped-direction terms.
  const auto& red = m.posterior.reduction;
  const Index pr = red.reduced_size();
  MatrixXd T(m.layout.total, pr);
  for (Index k = 0; k < pr; ++k) T.col(k) = red.to_full(VectorXd::Unit(pr, k));
  const MatrixXd Sr = m.posterior.reduced_covariance();
  const VectorXd fast = m.posterior.quad_form_diag(rows);
  for (Index i = 0; i < rows.rows(); ++i) {
    VectorXd r(pr);
    for (Index k = 0; k < pr; ++k) r[k] = rows.row(i).dot(T.col(k));
    double dense = r.dot(Sr * r);
    const auto& blk = m.layout.smooth[0];
    const double e = rows.row(i).segment(blk.start, blk.size).sum() / std::sqrt(static_cast<double>(blk.size));
    dense += e * e * m.posterior.null_var[0];
    EXPECT_NEAR(fast[i], dense, 1e-10 * std::abs(dense));
  }
}

TEST(Predict, SpatialSurfaceUsesSpatialColumnsOnly) {
  const auto& m = gaussian_model();
  MatrixXd w(2, 2);
  w << 0.1, 0.2, -1.0, 2.0;
  const MatrixXd rows = spatial_rows(m, w);
  EXPECT_EQ(rows.leftCols(2), MatrixXd::Zero(2, 2));
  EXPECT_EQ(rows.middleCols(m.layout.smooth[0].start, m.layout.smooth[0].size),
            MatrixXd::Zero(2, m.layout.smooth[0].size));
  EXPECT_EQ(rows.middleCols(2, 2), w);
}

TEST(Predict, BadInputsAreRejected) {
  const auto& m = gaussian_model();
  auto t = new_points(4, 49);
  NewPoints p = NewPoints::from_table(m, t);
  p.smooth[0][1] = 5.0;
  EXPECT_THROW(predict(m, p), DomainError);
  p = NewPoints::from_table(m, t);
  p.coords.resize(0, 0);
  EXPECT_THROW(predict(m, p), DataError);
  p = NewPoints::from_table(m, t);
  p.N = VectorXd::Ones(4);
  EXPECT_THROW(predict(m, p), ConfigError);
  p.N.resize(0);
  EXPECT_THROW(predict(m, p, {0.95, 1, 1}), ConfigError);
}
