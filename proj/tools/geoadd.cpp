// geoadd command-line front end: fit, predict, simulate, knots.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include "geoadd.hpp"

namespace fs = std::filesystem;
using namespace geoadd;

namespace {

constexpr int kExitData = 2;
constexpr int kExitConvergence = 3;

struct CommonArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool standardize = false;
  bool no_timestamp = false;
};

void add_common(CLI::App* sub, CommonArgs& a) {
  sub->add_option("--config", a.config, "JSON config file");
  sub->add_option("--data", a.data, "input CSV");
  sub->add_option("--out", a.out, "output directory");
  sub->add_option("--seed", a.seed, "random seed");
  sub->add_option("--threads", a.threads, "worker threads (default: GEOADD_THREADS or hardware)");
  sub->add_flag("--standardize-coords", a.standardize, "center and scale coordinates before distances");
}

int resolve_threads(const std::optional<int>& flag) {
  if (flag) {
    if (*flag < 1) throw ConfigError("--threads must be at least 1");
    return *flag;
  }
  if (const char* env = std::getenv("GEOADD_THREADS")) {
    try {
      const int t = std::stoi(env);
      if (t >= 1) return t;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("GEOADD_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  json j = read_json_file(path);
  if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
  return j;
}

std::string pick(const std::string& flag, const json& cfg, const char* key, const std::string& fallback = "") {
  if (!flag.empty()) return flag;
  if (cfg.contains(key) && cfg[key].is_string()) return cfg[key].get<std::string>();
  return fallback;
}

fs::path ensure_dir(const std::string& dir) {
  fs::path p = dir.empty() ? fs::path(".") : fs::path(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory '" + p.string() + "': " + ec.message());
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  out << std::setprecision(17);
  return out;
}

void metadata_header(std::ostream& out, const std::string& command, const json& resolved) {
  out << "# geoadd " << kVersion << '\n';
  out << "# command: " << command << '\n';
  out << "# config: " << resolved.dump() << '\n';
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  out << j.dump(1) << '\n';
}

FitOptions fit_options_from(const json& cfg) {
  FitOptions o;
  if (cfg.contains("optimizer")) {
    const json& j = cfg["optimizer"];
    if (!j.is_object()) throw ConfigError("config: 'optimizer' must be an object");
    auto num = [&](const char* k, double& v) {
      if (j.contains(k)) v = j[k].get<double>();
    };
    for (auto it = j.begin(); it != j.end(); ++it) {
      static const char* known[] = {"max_evals", "simplex_tol", "value_tol", "init_step", "v_lo", "v_hi",
                                    "phi_lo", "phi_hi", "rho_lo", "rho_hi", "newton_max_iter",
                                    "newton_rel_tol", "newton_grad_tol"};
      bool ok = false;
      for (const char* k : known) ok = ok || it.key() == k;
      if (!ok) throw ConfigError("optimizer: unknown key '" + it.key() + "'");
    }
    if (j.contains("max_evals")) o.nm.max_evals = j["max_evals"].get<int>();
    num("simplex_tol", o.nm.simplex_tol);
    num("value_tol", o.nm.value_tol);
    num("init_step", o.init_step);
    num("v_lo", o.v_lo);
    num("v_hi", o.v_hi);
    num("phi_lo", o.phi_lo);
    num("phi_hi", o.phi_hi);
    num("rho_lo", o.rho_lo);
    num("rho_hi", o.rho_hi);
    if (j.contains("newton_max_iter")) o.newton.max_iter = j["newton_max_iter"].get<int>();
    num("newton_rel_tol", o.newton.rel_tol);
    num("newton_grad_tol", o.newton.grad_tol);
  }
  return o;
}

json optimizer_json(const FitOptions& o) {
  return {{"max_evals", o.nm.max_evals}, {"simplex_tol", o.nm.simplex_tol}, {"value_tol", o.nm.value_tol},
          {"init_step", o.init_step},    {"v_lo", o.v_lo},                  {"v_hi", o.v_hi},
          {"phi_lo", o.phi_lo},          {"phi_hi", o.phi_hi},              {"rho_lo", o.rho_lo},
          {"rho_hi", o.rho_hi},          {"newton_max_iter", o.newton.max_iter},
          {"newton_rel_tol", o.newton.rel_tol}, {"newton_grad_tol", o.newton.grad_tol}};
}

json smooth_test_json(const SmoothTestResult& t) {
  return {{"term", t.term}, {"statistic", t.statistic}, {"rank", t.rank},
          {"ed", t.ed},     {"p_value", t.p_value},     {"warnings", t.warnings}};
}

// ---------------------------------------------------------------------------

int cmd_fit(const CommonArgs& a, int grid, double level, const std::string& command_line) {
  const json cfg = load_config(a.config);
  ModelSpec spec = spec_from_json(cfg, {"data", "out", "optimizer", "grid", "level", "seed"});
  if (a.seed) spec.spatial.seed = *a.seed;
  else if (cfg.contains("seed")) spec.spatial.seed = cfg["seed"].get<std::uint64_t>();
  if (a.standardize) spec.spatial.standardize = true;
  const FitOptions opt = fit_options_from(cfg);
  const std::string data_path = pick(a.data, cfg, "data");
  if (data_path.empty()) throw ConfigError("fit needs --data or a 'data' entry in the config");
  const fs::path out = ensure_dir(pick(a.out, cfg, "out", "."));
  if (cfg.contains("grid")) grid = cfg["grid"].get<int>();
  if (cfg.contains("level")) level = cfg["level"].get<double>();
  if (grid < 2) throw ConfigError("grid must have at least 2 points");

  json resolved = spec_to_json(spec);
  resolved["data"] = data_path;
  resolved["out"] = out.string();
  resolved["optimizer"] = optimizer_json(opt);
  resolved["grid"] = grid;
  resolved["level"] = level;

  const DataTable table = DataTable::read_csv(data_path);
  const FittedModel m = fit(spec, table, opt);

  json model = model_to_json(m, a.no_timestamp ? std::string() : utc_timestamp());
  model["config"] = resolved;
  write_json(out / "model.json", model);

  json report;
  report["version"] = std::string(kVersion);
  report["command"] = command_line;
  report["config"] = resolved;
  report["n"] = m.n;
  report["log_likelihood"] = m.log_lik;
  report["log_posterior"] = m.log_posterior;
  report["bic"] = m.bic;
  report["ed"] = {{"total", m.ed.total}, {"beta", m.ed.beta}, {"smooth", m.ed.smooth}, {"spatial", m.ed.spatial}};
  report["lambda"] = std::vector<double>(m.lambda.data(), m.lambda.data() + m.lambda.size());
  if (m.layout.has_spatial()) report["rho"] = m.rho;
  if (m.spec.family == FamilyKind::NegBinomial) report["phi"] = m.phi;
  if (m.tau) report["tau"] = {{"shape", m.tau->shape}, {"rate", m.tau->rate}, {"mean", m.tau->mean()}};
  report["smooth_tests"] = json::array();
  for (const auto& t : smooth_tests(m)) report["smooth_tests"].push_back(smooth_test_json(t));
  json coef = json::array();
  for (std::size_t k = 0; k < m.layout.beta_names.size(); ++k) {
    const Index i = static_cast<Index>(k);
    MatrixXd row = MatrixXd::Zero(1, m.layout.total);
    row(0, i) = 1.0;
    coef.push_back({{"name", m.layout.beta_names[k]},
                    {"estimate", m.posterior.mean[i]},
                    {"sd", std::sqrt(m.posterior.quad_form_diag(row)[0])}});
  }
  report["coefficients"] = coef;
  json trace = json::array();
  for (const auto& t : m.trace)
    trace.push_back({{"state", t.state}, {"log_posterior", std::isfinite(t.value) ? json(t.value) : json(nullptr)},
                     {"inner_iterations", t.inner_iterations}, {"clamped", t.clamped}, {"ok", t.ok},
                     {"failure", t.failure}});
  report["trace"] = trace;
  report["evaluations"] = m.evaluations;
  report["newton_iterations"] = m.newton_iterations;
  report["converged"] = m.converged;
  report["warnings"] = m.warnings;
  write_json(out / "report.json", report);

  for (std::size_t j = 0; j < m.spec.smooths.size(); ++j) {
    const auto& name = m.spec.smooths[j].name;
    const VectorXd& x = m.smooth_x[j];
    const CurveResult c = smooth_curve(m, name, linspace(x.minCoeff(), x.maxCoeff(), grid), level);
    auto f = open_out(out / ("curve_" + name + ".csv"));
    metadata_header(f, "fit", resolved);
    f << name << ",fit,sd,lo,hi\n";
    for (Index i = 0; i < c.x.size(); ++i)
      f << c.x[i] << ',' << c.fit[i] << ',' << c.sd[i] << ',' << c.lo[i] << ',' << c.hi[i] << '\n';
  }
  if (m.layout.has_spatial()) {
    const VectorXd w1 = table.column(spec.spatial.x_col), w2 = table.column(spec.spatial.y_col);
    const MatrixXd g = grid2d(w1.minCoeff(), w1.maxCoeff(), w2.minCoeff(), w2.maxCoeff(), grid);
    const CurveResult s = spatial_surface(m, g, level);
    auto f = open_out(out / "spatial_surface.csv");
    metadata_header(f, "fit", resolved);
    f << spec.spatial.x_col << ',' << spec.spatial.y_col << ",s,sd\n";
    for (Index i = 0; i < g.rows(); ++i) f << g(i, 0) << ',' << g(i, 1) << ',' << s.fit[i] << ',' << s.sd[i] << '\n';
  }

  std::cout << "fitted " << m.n << " rows; BIC " << std::setprecision(10) << m.bic << "; ED " << m.ed.total
            << "; outputs in " << out.string() << '\n';
  return 0;
}

int cmd_predict(const CommonArgs& a, const std::string& model_path, double level, int samples) {
  const json cfg = load_config(a.config);
  const std::string mpath = pick(model_path, cfg, "model");
  if (mpath.empty()) throw ConfigError("predict needs --model");
  const std::string data_path = pick(a.data, cfg, "data");
  if (data_path.empty()) throw ConfigError("predict needs --data with the new points");
  const fs::path out = ensure_dir(pick(a.out, cfg, "out", "."));
  PredictionRequest req;
  req.level = cfg.contains("level") ? cfg["level"].get<double>() : level;
  req.n_samples = cfg.contains("samples") ? cfg["samples"].get<int>() : samples;
  req.seed = a.seed ? *a.seed : (cfg.contains("seed") ? cfg["seed"].get<std::uint64_t>() : 1);
  if (req.n_samples < 2) throw ConfigError("--samples must be at least 2");

  const FittedModel m = load_model(mpath);
  const DataTable table = DataTable::read_csv(data_path);
  const NewPoints p = NewPoints::from_table(m, table);
  const PredictionResult r = predict(m, p, req);

  const json resolved = {{"model", mpath}, {"data", data_path}, {"out", out.string()}, {"level", req.level},
                         {"samples", req.n_samples}, {"seed", req.seed}, {"rng", std::string(kRngName)}};
  auto f = open_out(out / "predictions.csv");
  metadata_header(f, "predict", resolved);
  f << "row,eta,eta_sd,mean,ci_lo,ci_hi,pi_lo,pi_hi\n";
  for (Index i = 0; i < r.mean.size(); ++i)
    f << i << ',' << r.eta[i] << ',' << r.eta_sd[i] << ',' << r.mean[i] << ',' << r.ci_lo[i] << ',' << r.ci_hi[i]
      << ',' << r.pi_lo[i] << ',' << r.pi_hi[i] << '\n';
  std::cout << "predicted " << r.mean.size() << " points; outputs in " << out.string() << '\n';
  return 0;
}

Scenario scenario_from_json(const json& j) {
  Scenario sc;
  static const char* known[] = {"data", "family", "surface", "kind", "n", "B", "grid_m", "spatial_grid",
                                "beta0", "beta1", "gaussian_sd", "count_sd", "grf_sill", "grf_range",
                                "smooth_effect", "in_sample_pi", "num_basis", "num_knots", "pi_samples",
                                "seed", "threads", "optimizer", "out"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("scenario: unknown key '" + it.key() + "'");
  }
  try {
    if (j.contains("family")) sc.fit_family = family_from_string(j["family"].get<std::string>());
    sc.data = j.contains("data") ? data_kind_from_string(j["data"].get<std::string>())
                                 : (is_count(sc.fit_family) ? DataKind::Count : DataKind::Gaussian);
    if (j.contains("surface")) sc.surface = surface_from_string(j["surface"].get<std::string>());
    if (j.contains("kind")) sc.kind = covariance_from_string(j["kind"].get<std::string>());
    auto geti = [&](const char* k, int& v) {
      if (j.contains(k)) v = j[k].get<int>();
    };
    auto getd = [&](const char* k, double& v) {
      if (j.contains(k)) v = j[k].get<double>();
    };
    geti("n", sc.n);
    geti("B", sc.B);
    geti("grid_m", sc.grid_m);
    geti("spatial_grid", sc.spatial_grid);
    getd("beta0", sc.beta0);
    getd("beta1", sc.beta1);
    getd("gaussian_sd", sc.gaussian_sd);
    getd("count_sd", sc.count_sd);
    getd("grf_sill", sc.grf_sill);
    getd("grf_range", sc.grf_range);
    if (j.contains("smooth_effect")) sc.smooth_effect = j["smooth_effect"].get<bool>();
    if (j.contains("in_sample_pi")) sc.in_sample_pi = j["in_sample_pi"].get<bool>();
    geti("num_basis", sc.num_basis);
    geti("num_knots", sc.num_knots);
    geti("pi_samples", sc.pi_samples);
    if (j.contains("seed")) sc.seed = j["seed"].get<std::uint64_t>();
    geti("threads", sc.threads);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  sc.fit = fit_options_from(j);
  return sc;
}

json scenario_json(const Scenario& sc) {
  return {{"data", to_string(sc.data)},
          {"family", to_string(sc.fit_family)},
          {"surface", to_string(sc.surface)},
          {"kind", to_string(sc.kind)},
          {"n", sc.n},
          {"B", sc.B},
          {"grid_m", sc.grid_m},
          {"spatial_grid", sc.spatial_grid},
          {"beta0", sc.beta0},
          {"beta1", sc.beta1},
          {"gaussian_sd", sc.gaussian_sd},
          {"count_sd", sc.count_sd},
          {"grf_sill", sc.grf_sill},
          {"grf_range", sc.grf_range},
          {"smooth_effect", sc.smooth_effect},
          {"in_sample_pi", sc.in_sample_pi},
          {"num_basis", sc.num_basis},
          {"num_knots", sc.num_knots},
          {"pi_samples", sc.pi_samples},
          {"seed", sc.seed},
          {"threads", sc.threads},
          {"optimizer", optimizer_json(sc.fit)}};
}

int cmd_simulate(const CommonArgs& a, int timing) {
  if (a.config.empty()) throw ConfigError("simulate needs --config with a scenario");
  const json cfg = load_config(a.config);
  Scenario sc = scenario_from_json(cfg);
  if (a.seed) sc.seed = *a.seed;
  sc.threads = a.threads || !cfg.contains("threads") ? resolve_threads(a.threads) : sc.threads;
  const fs::path out = ensure_dir(pick(a.out, cfg, "out", "."));
  const json resolved = scenario_json(sc);

  if (timing > 0) {
    const TimingSummary t = time_fits(sc, timing);
    auto f = open_out(out / "timing.csv");
    metadata_header(f, "simulate --timing", resolved);
    f << std::setprecision(6) << "method,min,mean,median,max\n";
    f << "geoadd," << t.min << ',' << t.mean << ',' << t.median << ',' << t.max << '\n';
    write_json(out / "timing.json", {{"version", std::string(kVersion)}, {"config", resolved}, {"repeats", timing},
                                     {"seconds", t.seconds}, {"min", t.min}, {"mean", t.mean},
                                     {"median", t.median}, {"max", t.max}});
    std::cout << std::setprecision(4) << "fit time over " << timing << " runs: min " << t.min << " s, mean " << t.mean
              << " s, median " << t.median << " s, max " << t.max << " s\n";
    return 0;
  }

  const SimulationReport rep = simulate(sc);
  auto f = open_out(out / "report.csv");
  metadata_header(f, "simulate", resolved);
  f << report_csv_header() << '\n' << report_csv_row(rep) << '\n';

  json reps = json::array();
  for (const auto& o : rep.outcomes) {
    json r = {{"index", o.index}, {"ok", o.ok}, {"seconds", o.seconds}};
    if (!o.ok) r["failure"] = o.failure;
    else {
      r["ed_total"] = o.ed_total;
      r["hyper"] = o.hyper;
      if (o.smooth_test) r["smooth_test"] = smooth_test_json(*o.smooth_test);
    }
    reps.push_back(r);
  }
  write_json(out / "report.json",
             {{"version", std::string(kVersion)},
              {"config", resolved},
              {"master_seed", sc.seed},
              {"rng", std::string(Philox::name)},
              {"seconds", rep.seconds},
              {"replicates", rep.replicates},
              {"failed", rep.failed},
              {"excluded_pct_points", {{"f", rep.f.excluded}, {"s", rep.s.excluded}, {"mu", rep.mu.excluded}}},
              {"outcomes", reps}});
  std::cout << report_csv_header() << '\n' << report_csv_row(rep) << '\n';
  return 0;
}

int cmd_knots(const CommonArgs& a, int S, std::string xcol, std::string ycol, int swaps) {
  const json cfg = load_config(a.config);
  if (cfg.contains("spatial") && cfg["spatial"].is_object()) {
    const json& sp = cfg["spatial"];
    if (xcol.empty() && sp.contains("x")) xcol = sp["x"].get<std::string>();
    if (ycol.empty() && sp.contains("y")) ycol = sp["y"].get<std::string>();
    if (S <= 0 && sp.contains("num_knots")) S = sp["num_knots"].get<int>();
    if (swaps < 0 && sp.contains("swaps")) swaps = sp["swaps"].get<int>();
  }
  if (xcol.empty()) xcol = "x";
  if (ycol.empty()) ycol = "y";
  const std::string data_path = pick(a.data, cfg, "data");
  if (data_path.empty()) throw ConfigError("knots needs --data");
  const fs::path out = ensure_dir(pick(a.out, cfg, "out", "."));
  std::uint64_t seed = 1;
  if (a.seed) seed = *a.seed;
  else if (cfg.contains("spatial") && cfg["spatial"].is_object() && cfg["spatial"].contains("seed"))
    seed = cfg["spatial"]["seed"].get<std::uint64_t>();

  const DataTable t = DataTable::read_csv(data_path);
  MatrixXd coords(t.rows(), 2);
  coords.col(0) = t.column(xcol);
  coords.col(1) = t.column(ycol);
  if (S <= 0) S = default_knot_count(coords.rows());
  const KnotSet k = select_knots(coords, S, seed, swaps);

  const json resolved = {{"data", data_path}, {"x", xcol}, {"y", ycol}, {"num_knots", S},
                         {"seed", seed},      {"swaps", swaps}, {"out", out.string()}};
  auto f = open_out(out / "knots.csv");
  metadata_header(f, "knots", resolved);
  f << "# criterion: " << k.criterion_value << '\n';
  f << xcol << ',' << ycol << ",site\n";
  for (Index i = 0; i < k.size(); ++i) f << k.knots(i, 0) << ',' << k.knots(i, 1) << ',' << k.sites[static_cast<std::size_t>(i)] << '\n';
  std::cout << std::setprecision(17)
            << json{{"knots", k.size()}, {"criterion", k.criterion_value}, {"duplicates_collapsed", k.duplicates_collapsed}}
                   .dump()
            << '\n';
  return 0;
}

int report_error(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian geoadditive models: P-splines, low-rank kriging and Laplace approximations"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonArgs fa, pa, sa, ka;
  int grid = 100;
  double level = 0.95;
  auto* fit_cmd = app.add_subcommand("fit", "fit a model to a CSV");
  add_common(fit_cmd, fa);
  fit_cmd->add_option("--grid", grid, "points per axis for curve and surface exports");
  fit_cmd->add_option("--level", level, "credible level");
  fit_cmd->add_flag("--no-timestamp", fa.no_timestamp, "omit the creation time from model.json");

  std::string model_path;
  double plevel = 0.95;
  int samples = 1000;
  auto* pred_cmd = app.add_subcommand("predict", "predict at new points");
  add_common(pred_cmd, pa);
  pred_cmd->add_option("--model", model_path, "model.json from fit");
  pred_cmd->add_option("--level", plevel, "interval level");
  pred_cmd->add_option("--samples", samples, "Monte Carlo draws per point");

  int timing = 0;
  auto* sim_cmd = app.add_subcommand("simulate", "run a simulation scenario");
  add_common(sim_cmd, sa);
  sim_cmd->add_option("--timing", timing, "time this many repeated fits instead of running replicates");

  int S = 0, swaps = -1;
  std::string xcol, ycol;
  auto* knot_cmd = app.add_subcommand("knots", "select space-filling knots");
  add_common(knot_cmd, ka);
  knot_cmd->add_option("-S,--num-knots", S, "number of knots (default from n)");
  knot_cmd->add_option("--x", xcol, "x coordinate column");
  knot_cmd->add_option("--y", ycol, "y coordinate column");
  knot_cmd->add_option("--swaps", swaps, "swap attempts (default 10 S)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return report_error("usage_error", e.what(), kExitData);
  }

  std::string command_line;
  for (int i = 0; i < argc; ++i) command_line += (i ? " " : "") + std::string(argv[i]);

  try {
    if (*fit_cmd) return cmd_fit(fa, grid, level, command_line);
    if (*pred_cmd) return cmd_predict(pa, model_path, plevel, samples);
    if (*sim_cmd) return cmd_simulate(sa, timing);
    if (*knot_cmd) return cmd_knots(ka, S, xcol, ycol, swaps);
  } catch (const ConvergenceError& e) {
    return report_error(e.kind(), e.what(), kExitConvergence);
  } catch (const NumericalError& e) {
    return report_error(e.kind(), e.what(), kExitConvergence);
  } catch (const Error& e) {
    return report_error(e.kind(), e.what(), kExitData);
  } catch (const json::exception& e) {
    return report_error("config_error", e.what(), kExitData);
  } catch (const std::exception& e) {
    return report_error("internal_error", e.what(), 1);
  }
  return 0;
}
