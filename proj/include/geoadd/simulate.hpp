#pragma once

// Simulation study: data generation for the s1-s3 and random-field designs,
// replicate fitting on a worker pool, and Bias / %Bias / coverage scoring.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "geoadd/diagnostics.hpp"
#include "geoadd/error.hpp"
#include "geoadd/inference.hpp"
#include "geoadd/predict.hpp"
#include "geoadd/random.hpp"
#include "geoadd/spatial.hpp"

namespace geoadd {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class DataKind { Gaussian, Count };
enum class SurfaceTag { S1, S2, S3, GRF };

inline std::string to_string(SurfaceTag t) {
  switch (t) {
    case SurfaceTag::S1: return "s1";
    case SurfaceTag::S2: return "s2";
    case SurfaceTag::S3: return "s3";
    case SurfaceTag::GRF: return "grf";
  }
  return "unknown";
}

inline SurfaceTag surface_from_string(const std::string& s) {
  if (s == "s1") return SurfaceTag::S1;
  if (s == "s2") return SurfaceTag::S2;
  if (s == "s3") return SurfaceTag::S3;
  if (s == "grf") return SurfaceTag::GRF;
  throw ConfigError("unknown spatial function '" + s + "' (expected s1, s2, s3 or grf)");
}

inline std::string to_string(DataKind d) { return d == DataKind::Gaussian ? "gaussian" : "count"; }

inline DataKind data_kind_from_string(const std::string& s) {
  if (s == "gaussian") return DataKind::Gaussian;
  if (s == "count") return DataKind::Count;
  throw ConfigError("unknown data kind '" + s + "' (expected gaussian or count)");
}

inline double true_surface(SurfaceTag tag, double w1, double w2) {
  switch (tag) {
    case SurfaceTag::S1: return 0.5 - (w1 * w1 + w2 * w2) / 18.0;
    case SurfaceTag::S2: return (w1 * w1 * w1 + w1 * w2 + w2 * w2) / 25.0;
    case SurfaceTag::S3: return -(w1 - w2) * (w1 - w2) / 15.0 + std::sin(w1) * std::cos(w2);
    case SurfaceTag::GRF: break;
  }
  throw ConfigError("the random-field design has no closed-form surface");
}

inline double true_smooth(double x) { return std::cos(2.0 * M_PI * x); }

/// SplitMix64 finalizer, used to derive independent seeds from (seed, tag).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct Scenario {
  DataKind data = DataKind::Gaussian;
  FamilyKind fit_family = FamilyKind::Gaussian;
  SurfaceTag surface = SurfaceTag::S1;
  CovarianceKind kind = CovarianceKind::Exponential;
  int n = 300;
  int B = 100;
  int grid_m = 100;        // smooth-term grid over (0.05, 0.95)
  int spatial_grid = 20;   // g x g spatial grid
  double beta0 = 3.0, beta1 = -0.5;
  double gaussian_sd = std::sqrt(0.10);
  double count_sd = 0.25;
  double grf_sill = 0.5, grf_range = 0.15;
  bool smooth_effect = true;  // false: f == 0 (no smooth signal)
  bool in_sample_pi = false;
  int num_basis = 15;
  int num_knots = 0;
  int pi_samples = 1000;
  std::uint64_t seed = 2024;
  int threads = 1;
  FitOptions fit;

  void validate() const {
    if (n < 50) throw ConfigError("scenario needs n >= 50");
    if (B < 1) throw ConfigError("scenario needs at least one replicate");
    if (grid_m < 2 || spatial_grid < 2) throw ConfigError("grids need at least 2 points per axis");
    if (data == DataKind::Gaussian && fit_family != FamilyKind::Gaussian)
      throw ConfigError("Gaussian data must be fitted with the Gaussian family");
    if (data == DataKind::Count && fit_family == FamilyKind::Gaussian)
      throw ConfigError("count data must be fitted with a count family");
    if (surface == SurfaceTag::GRF && data != DataKind::Gaussian)
      throw ConfigError("the random-field design is defined for Gaussian data");
  }

  bool grf() const { return surface == SurfaceTag::GRF; }
  double domain_lo() const { return grf() ? 0.0 : -3.0; }
  double domain_hi() const { return grf() ? 1.0 : 3.0; }
  double grid_lo() const { return grf() ? 0.05 : -2.7; }
  double grid_hi() const { return grf() ? 0.95 : 2.7; }
};

struct Dataset {
  DataTable train;
  VectorXd eta_train;
  MatrixXd hold_coords;
  VectorXd hold_x1, hold_x2, hold_eta, hold_y;
  VectorXd grid_surface;  // random field at the spatial grid (grf design)
};

/// Model fitted in every replicate.
inline ModelSpec scenario_model(const Scenario& sc) {
  ModelSpec s;
  s.family = sc.fit_family;
  s.response = "y";
  if (!sc.grf()) {
    s.linear = {"x1"};
    SmoothSpec sm;
    sm.name = "x2";
    sm.num_basis = sc.num_basis;
    s.smooths.push_back(sm);
  }
  s.spatial.include = true;
  s.spatial.x_col = "w1";
  s.spatial.y_col = "w2";
  s.spatial.kind = sc.kind;
  s.spatial.num_knots = sc.num_knots;
  s.spatial.seed = derive_seed(sc.seed, 0xC0FFEE);
  return s;
}

namespace detail {

inline VectorXd random_field(const MatrixXd& pts, const Scenario& sc, Philox& rng) {
  MatrixXd K = sc.grf_sill * kernel_matrix(pts, pts, sc.kind, 1.0 / sc.grf_range);
  boost::random::normal_distribution<double> nd;
  VectorXd z(pts.rows());
  for (Index i = 0; i < z.size(); ++i) z[i] = nd(rng);
  for (double jit = 1e-10; jit < 1e-2; jit *= 10.0) {
    MatrixXd Kj = K;
    Kj.diagonal().array() += jit * sc.grf_sill;
    Eigen::LLT<MatrixXd> llt(Kj);
    if (llt.info() == Eigen::Success) return llt.matrixL() * z;
  }
  throw NumericalError("random-field covariance is not positive definite");
}

}  // namespace detail

/// Replicate b depends only on (scenario, b).
inline Dataset generate_dataset(const Scenario& sc, int b) {
  Philox rng(sc.seed, static_cast<std::uint64_t>(b));
  boost::random::normal_distribution<double> nd;
  const Index n = sc.n;
  const double lo = sc.domain_lo(), hi = sc.domain_hi();
  Dataset ds;
  VectorXd x1(n), x2(n), w1(n), w2(n), y(n);
  for (Index i = 0; i < n; ++i) {
    x1[i] = rng.uniform();
    x2[i] = rng.uniform();
    w1[i] = lo + (hi - lo) * rng.uniform();
    w2[i] = lo + (hi - lo) * rng.uniform();
  }
  ds.hold_coords = grid2d(sc.grid_lo(), sc.grid_hi(), sc.grid_lo(), sc.grid_hi(), sc.spatial_grid);
  const Index m = ds.hold_coords.rows();
  ds.hold_x1.resize(m);
  ds.hold_x2.resize(m);
  for (Index i = 0; i < m; ++i) {
    ds.hold_x1[i] = 0.05 + 0.9 * rng.uniform();
    ds.hold_x2[i] = 0.05 + 0.9 * rng.uniform();
  }

  ds.eta_train.resize(n);
  ds.hold_eta.resize(m);
  if (sc.grf()) {
    MatrixXd pts(n + m, 2);
    pts.topRows(n).col(0) = w1;
    pts.topRows(n).col(1) = w2;
    pts.bottomRows(m) = ds.hold_coords;
    const VectorXd field = detail::random_field(pts, sc, rng);
    ds.eta_train = sc.beta0 + field.head(n).array();
    ds.grid_surface = field.tail(m);
    ds.hold_eta = sc.beta0 + ds.grid_surface.array();
  } else {
    const double fs = sc.smooth_effect ? 1.0 : 0.0;
    for (Index i = 0; i < n; ++i)
      ds.eta_train[i] = sc.beta0 + sc.beta1 * x1[i] + fs * true_smooth(x2[i]) + true_surface(sc.surface, w1[i], w2[i]);
    for (Index i = 0; i < m; ++i)
      ds.hold_eta[i] = sc.beta0 + sc.beta1 * ds.hold_x1[i] + fs * true_smooth(ds.hold_x2[i]) +
                       true_surface(sc.surface, ds.hold_coords(i, 0), ds.hold_coords(i, 1));
  }

  auto draw = [&](double eta) {
    if (sc.data == DataKind::Gaussian) return eta + sc.gaussian_sd * nd(rng);
    const double rate = std::exp(eta + sc.count_sd * nd(rng));
    return static_cast<double>(boost::random::poisson_distribution<long long, double>(rate)(rng));
  };
  for (Index i = 0; i < n; ++i) y[i] = draw(ds.eta_train[i]);
  ds.hold_y.resize(m);
  for (Index i = 0; i < m; ++i) ds.hold_y[i] = draw(ds.hold_eta[i]);

  ds.train.set_column("y", y);
  ds.train.set_column("x1", x1);
  ds.train.set_column("x2", x2);
  ds.train.set_column("w1", w1);
  ds.train.set_column("w2", w2);
  return ds;
}

/// Running sums for one performance quantity.
struct ErrorSums {
  double err = 0;       // sum of (truth - estimate)
  double abs_pct = 0;   // sum of |(truth - estimate) / truth| * 100
  Index n = 0;
  Index n_pct = 0;
  Index excluded = 0;   // |truth| < 1e-8, left out of %Bias
  Index covered = 0;
  Index n_cover = 0;

  void add(double truth, double est) {
    err += truth - est;
    ++n;
    if (std::abs(truth) < 1e-8) {
      ++excluded;
    } else {
      abs_pct += std::abs((truth - est) / truth) * 100.0;
      ++n_pct;
    }
  }
  void add_cover(bool inside) {
    covered += inside ? 1 : 0;
    ++n_cover;
  }
  void merge(const ErrorSums& o) {
    err += o.err, abs_pct += o.abs_pct, n += o.n, n_pct += o.n_pct, excluded += o.excluded;
    covered += o.covered, n_cover += o.n_cover;
  }
  double bias() const { return n ? err / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN(); }
  double bias_pct() const {
    return n_pct ? abs_pct / static_cast<double>(n_pct) : std::numeric_limits<double>::quiet_NaN();
  }
  double coverage() const {
    return n_cover ? 100.0 * static_cast<double>(covered) / static_cast<double>(n_cover)
                   : std::numeric_limits<double>::quiet_NaN();
  }
};

struct ReplicateOutcome {
  int index = 0;
  bool ok = false;
  std::string failure;
  ErrorSums f, s, mu, y;
  double seconds = 0;
  double ed_total = 0;
  double bic = 0;
  std::vector<double> hyper;
  std::optional<SmoothTestResult> smooth_test;
};

namespace detail {

// Centers rows over the grid so the estimate is centered like the truth.
inline void score_centered(const FittedModel& m, MatrixXd rows, VectorXd truth, double z, ErrorSums& acc) {
  rows.rowwise() -= rows.colwise().mean();
  truth.array() -= truth.mean();
  const VectorXd est = rows * m.posterior.mean;
  const VectorXd sd = m.posterior.quad_form_diag(rows).cwiseMax(0.0).cwiseSqrt();
  for (Index i = 0; i < truth.size(); ++i) {
    acc.add(truth[i], est[i]);
    acc.add_cover(std::abs(truth[i] - est[i]) <= z * sd[i]);
  }
}

}  // namespace detail

/// Scores one fitted replicate against its dataset.
inline void score_replicate(const Scenario& sc, const Dataset& ds, const FittedModel& m, ReplicateOutcome& out) {
  const double z = normal_quantile(0.975);
  if (!sc.grf()) {
    const VectorXd grid = linspace(0.05, 0.95, sc.grid_m);
    VectorXd truth(grid.size());
    for (Index i = 0; i < grid.size(); ++i) truth[i] = sc.smooth_effect ? true_smooth(grid[i]) : 0.0;
    detail::score_centered(m, smooth_rows(m, 0, grid), truth, z, out.f);
  }
  VectorXd s_truth(ds.hold_coords.rows());
  for (Index i = 0; i < s_truth.size(); ++i)
    s_truth[i] = sc.grf() ? ds.grid_surface[i] : true_surface(sc.surface, ds.hold_coords(i, 0), ds.hold_coords(i, 1));
  detail::score_centered(m, spatial_rows(m, ds.hold_coords), s_truth, z, out.s);

  NewPoints p;
  p.coords = ds.hold_coords;
  if (!sc.grf()) {
    p.linear = ds.hold_x1;
    p.smooth = {ds.hold_x2};
  }
  PredictionRequest req;
  req.n_samples = sc.pi_samples;
  req.seed = derive_seed(sc.seed, 0x5EED0000ull + static_cast<std::uint64_t>(out.index));
  const PredictionResult pr = predict(m, p, req);
  for (Index i = 0; i < ds.hold_eta.size(); ++i) {
    const double mu = sc.data == DataKind::Gaussian ? ds.hold_eta[i] : std::exp(ds.hold_eta[i]);
    out.mu.add(mu, pr.mean[i]);
  }
  if (sc.in_sample_pi) {
    NewPoints tp;
    tp.coords.resize(sc.n, 2);
    tp.coords.col(0) = ds.train.column("w1");
    tp.coords.col(1) = ds.train.column("w2");
    if (!sc.grf()) {
      tp.linear = ds.train.column("x1");
      tp.smooth = {ds.train.column("x2")};
    }
    const PredictionResult tr = predict(m, tp, req);
    const VectorXd y = ds.train.column("y");
    for (Index i = 0; i < y.size(); ++i) out.y.add_cover(y[i] >= tr.pi_lo[i] && y[i] <= tr.pi_hi[i]);
  } else {
    for (Index i = 0; i < ds.hold_y.size(); ++i) out.y.add_cover(ds.hold_y[i] >= pr.pi_lo[i] && ds.hold_y[i] <= pr.pi_hi[i]);
  }
}

inline ReplicateOutcome run_replicate(const Scenario& sc, int b) {
  ReplicateOutcome out;
  out.index = b;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const Dataset ds = generate_dataset(sc, b);
    const FittedModel m = fit(scenario_model(sc), ds.train, sc.fit);
    out.ed_total = m.ed.total;
    out.bic = m.bic;
    out.hyper.assign(m.hyper.v.data(), m.hyper.v.data() + m.hyper.v.size());
    out.hyper.push_back(m.hyper.v_rho);
    if (m.spec.family == FamilyKind::NegBinomial) out.hyper.push_back(m.hyper.v_phi);
    if (!sc.grf()) out.smooth_test = smooth_test(m, "x2");
    score_replicate(sc, ds, m, out);
    out.ok = true;
  } catch (const Error& e) {
    out.ok = false;
    out.failure = std::string(e.kind()) + ": " + e.what();
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

struct SimulationReport {
  Scenario scenario;
  ErrorSums f, s, mu, y;
  int replicates = 0;  // successful
  int failed = 0;
  double seconds = 0;
  std::vector<ReplicateOutcome> outcomes;

  double f_bias_pct() const { return f.bias_pct(); }
  double f_cp() const { return f.coverage(); }
  double s_bias_pct() const { return s.bias_pct(); }
  double s_cp() const { return s.coverage(); }
  double mu_bias() const { return mu.bias(); }
  double mu_bias_pct() const { return mu.bias_pct(); }
  double y_pi_cp() const { return y.coverage(); }
};

/// Runs the replicate loop for `indices` on `threads` workers.
template <class Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) fn(i);
    });
  for (auto& th : pool) th.join();
}

inline SimulationReport simulate(const Scenario& sc) {
  sc.validate();
  const auto t0 = std::chrono::steady_clock::now();
  SimulationReport rep;
  rep.scenario = sc;
  rep.outcomes.resize(static_cast<std::size_t>(sc.B));
  parallel_for(sc.B, sc.threads, [&](int b) { rep.outcomes[static_cast<std::size_t>(b)] = run_replicate(sc, b); });
  for (const auto& o : rep.outcomes) {
    if (!o.ok) {
      ++rep.failed;
      continue;
    }
    ++rep.replicates;
    rep.f.merge(o.f);
    rep.s.merge(o.s);
    rep.mu.merge(o.mu);
    rep.y.merge(o.y);
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (rep.replicates == 0) throw NumericalError("every simulation replicate failed");
  return rep;
}

inline std::string report_csv_header() {
  return "model,covariance,surface,f_bias_pct,f_cp,s_bias_pct,s_cp,mu_bias,mu_bias_pct,y_pi_cp,replicates,failed";
}

inline std::string report_csv_row(const SimulationReport& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  auto num = [&](double v) {
    if (std::isnan(v)) os << "NA";
    else os << v;
  };
  os << to_string(r.scenario.fit_family) << ',' << to_string(r.scenario.kind) << ',' << to_string(r.scenario.surface)
     << ',';
  num(r.f_bias_pct());
  os << ',';
  num(r.f_cp());
  os << ',';
  num(r.s_bias_pct());
  os << ',';
  num(r.s_cp());
  os << ',';
  num(r.mu_bias());
  os << ',';
  num(r.mu_bias_pct());
  os << ',';
  num(r.y_pi_cp());
  os << ',' << r.replicates << ',' << r.failed;
  return os.str();
}

struct TimingSummary {
  double min = 0, mean = 0, median = 0, max = 0;
  std::vector<double> seconds;
};

/// Wall time of `repeats` fits to one dataset of the scenario.
inline TimingSummary time_fits(const Scenario& sc, int repeats) {
  if (repeats < 1) throw ConfigError("timing needs at least one repeat");
  const Dataset ds = generate_dataset(sc, 0);
  const ModelSpec spec = scenario_model(sc);
  TimingSummary t;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const FittedModel m = fit(spec, ds.train, sc.fit);
    t.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::vector<double> s = t.seconds;
  std::sort(s.begin(), s.end());
  t.min = s.front();
  t.max = s.back();
  double sum = 0;
  for (double v : s) sum += v;
  t.mean = sum / static_cast<double>(s.size());
  t.median = s.size() % 2 ? s[s.size() / 2] : 0.5 * (s[s.size() / 2 - 1] + s[s.size() / 2]);
  return t;
}

}  // namespace geoadd
