#pragma once

// JSON model files and model-spec configs.
//
// Doubles are written with shortest round-trip formatting and parsed with
// strtod, so a saved model reloads bit-exactly.

#include <Eigen/Dense>

#include <json.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "geoadd/error.hpp"
#include "geoadd/inference.hpp"
#include "geoadd/version.hpp"

namespace geoadd {

using json = nlohmann::json;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace detail {

inline json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json mat_json(const MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

// Row i holds entries (i, 0..i).
inline json lower_json(const MatrixXd& L) {
  json rows = json::array();
  for (Index i = 0; i < L.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j <= i; ++j) r.push_back(L(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw DataError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(where + ": field '" + key + "' has the wrong type (" + e.what() + ")");
  }
}

inline VectorXd json_vec(const json& j, const std::string& what) {
  if (!j.is_array()) throw DataError(what + " must be an array");
  VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw DataError(what + " must contain numbers");
    v[static_cast<Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline MatrixXd json_mat(const json& j, Index cols, const std::string& what) {
  if (!j.is_array()) throw DataError(what + " must be an array of rows");
  MatrixXd m(static_cast<Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const VectorXd r = json_vec(j[i], what);
    if (r.size() != cols) throw DataError(what + ": row " + std::to_string(i) + " has the wrong length");
    m.row(static_cast<Index>(i)) = r.transpose();
  }
  return m;
}

inline MatrixXd json_lower(const json& j, const std::string& what) {
  if (!j.is_array()) throw DataError(what + " must be an array of rows");
  const Index p = static_cast<Index>(j.size());
  MatrixXd L = MatrixXd::Zero(p, p);
  for (Index i = 0; i < p; ++i) {
    const VectorXd r = json_vec(j[static_cast<std::size_t>(i)], what);
    if (r.size() != i + 1) throw DataError(what + ": row " + std::to_string(i) + " must have " + std::to_string(i + 1) + " entries");
    L.row(i).head(i + 1) = r.transpose();
  }
  return L;
}

inline json range_json(const BlockRange& r) { return {r.start, r.size}; }

inline BlockRange json_range(const json& j) {
  if (!j.is_array() || j.size() != 2) throw DataError("layout ranges must be [start, size]");
  return {j[0].get<Index>(), j[1].get<Index>()};
}

}  // namespace detail

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// ---------------------------------------------------------------------------
// Model specs.

inline json spec_to_json(const ModelSpec& s) {
  json j;
  j["family"] = to_string(s.family);
  j["response"] = s.response;
  j["linear"] = s.linear;
  j["offset"] = s.offset;
  j["smooths"] = json::array();
  for (const auto& sm : s.smooths)
    j["smooths"].push_back({{"name", sm.name},
                            {"num_basis", sm.num_basis},
                            {"degree", sm.degree},
                            {"penalty_order", sm.penalty_order},
                            {"ridge", sm.ridge}});
  if (s.spatial.include) {
    j["spatial"] = {{"x", s.spatial.x_col},
                    {"y", s.spatial.y_col},
                    {"kind", to_string(s.spatial.kind)},
                    {"num_knots", s.spatial.num_knots},
                    {"seed", s.spatial.seed},
                    {"swaps", s.spatial.swaps},
                    {"jitter", s.spatial.jitter},
                    {"standardize", s.spatial.standardize}};
  } else {
    j["spatial"] = nullptr;
  }
  j["priors"] = {{"zeta", s.priors.zeta}, {"nu", s.priors.nu}, {"a_delta", s.priors.a_delta}, {"b_delta", s.priors.b_delta}};
  return j;
}

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": key '" + key + "' has the wrong type");
  }
}

}  // namespace detail

/// Model spec from a config object; missing keys keep their defaults.
/// `extra` lists top-level keys owned by the caller (I/O paths, optimizer).
inline ModelSpec spec_from_json(const json& j, std::initializer_list<const char*> extra = {}) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* known[] = {"family", "response", "linear", "offset", "smooths", "spatial", "priors"};
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    for (const char* k : extra) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("config: unknown key '" + it.key() + "'");
  }
  ModelSpec s;
  std::string fam = "gaussian";
  detail::read_opt(j, "family", fam, "config");
  s.family = family_from_string(fam);
  detail::read_opt(j, "response", s.response, "config");
  detail::read_opt(j, "linear", s.linear, "config");
  detail::read_opt(j, "offset", s.offset, "config");
  if (j.contains("smooths")) {
    if (!j["smooths"].is_array()) throw ConfigError("config: 'smooths' must be an array");
    for (const auto& e : j["smooths"]) {
      SmoothSpec sm;
      if (e.is_string()) {
        sm.name = e.get<std::string>();
      } else if (e.is_object()) {
        detail::check_keys(e, {"name", "num_basis", "degree", "penalty_order", "ridge"}, "smooths");
        detail::read_opt(e, "name", sm.name, "smooths");
        detail::read_opt(e, "num_basis", sm.num_basis, "smooths");
        detail::read_opt(e, "degree", sm.degree, "smooths");
        detail::read_opt(e, "penalty_order", sm.penalty_order, "smooths");
        detail::read_opt(e, "ridge", sm.ridge, "smooths");
      } else {
        throw ConfigError("config: each smooth is a column name or an object");
      }
      s.smooths.push_back(sm);
    }
  }
  if (j.contains("spatial") && !j["spatial"].is_null()) {
    const json& sp = j["spatial"];
    if (!sp.is_object()) throw ConfigError("config: 'spatial' must be an object or null");
    detail::check_keys(sp, {"x", "y", "kind", "num_knots", "seed", "swaps", "jitter", "standardize"}, "spatial");
    s.spatial.include = true;
    detail::read_opt(sp, "x", s.spatial.x_col, "spatial");
    detail::read_opt(sp, "y", s.spatial.y_col, "spatial");
    std::string kind = to_string(s.spatial.kind);
    detail::read_opt(sp, "kind", kind, "spatial");
    s.spatial.kind = covariance_from_string(kind);
    detail::read_opt(sp, "num_knots", s.spatial.num_knots, "spatial");
    detail::read_opt(sp, "seed", s.spatial.seed, "spatial");
    detail::read_opt(sp, "swaps", s.spatial.swaps, "spatial");
    detail::read_opt(sp, "jitter", s.spatial.jitter, "spatial");
    detail::read_opt(sp, "standardize", s.spatial.standardize, "spatial");
  }
  if (j.contains("priors")) {
    const json& p = j["priors"];
    detail::check_keys(p, {"zeta", "nu", "a_delta", "b_delta"}, "priors");
    detail::read_opt(p, "zeta", s.priors.zeta, "priors");
    detail::read_opt(p, "nu", s.priors.nu, "priors");
    detail::read_opt(p, "a_delta", s.priors.a_delta, "priors");
    detail::read_opt(p, "b_delta", s.priors.b_delta, "priors");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Fitted models.

/// Everything prediction and diagnostics need. `timestamp` empty omits the field.
inline json model_to_json(const FittedModel& m, const std::string& timestamp = utc_timestamp()) {
  using namespace detail;
  json j;
  j["format"] = kModelFormat;
  j["version"] = std::string(kVersion);
  if (!timestamp.empty()) j["created"] = timestamp;
  j["spec"] = spec_to_json(m.spec);
  j["n"] = m.n;

  json lay;
  lay["beta"] = range_json(m.layout.beta);
  lay["beta_names"] = m.layout.beta_names;
  lay["smooth"] = json::array();
  for (const auto& r : m.layout.smooth) lay["smooth"].push_back(range_json(r));
  lay["spatial"] = range_json(m.layout.spatial);
  lay["total"] = m.layout.total;
  j["layout"] = lay;

  j["smooths"] = json::array();
  for (std::size_t k = 0; k < m.bases.size(); ++k) {
    const auto& b = m.bases[k];
    j["smooths"].push_back({{"knots", b.knots},
                            {"degree", b.degree},
                            {"num_basis", b.num_basis},
                            {"lo", b.lo},
                            {"hi", b.hi},
                            {"centering", vec_json(m.smooth_centering[k].column_means)},
                            {"x", vec_json(m.smooth_x[k])}});
  }
  if (m.layout.has_spatial()) {
    j["spatial"] = {{"knots", mat_json(m.knots.knots)},
                    {"sites", m.knots.sites},
                    {"knot_seed", m.knots.seed},
                    {"criterion", m.knots.criterion_value},
                    {"duplicates_collapsed", m.knots.duplicates_collapsed},
                    {"coord_transform", {m.coord_transform.cx, m.coord_transform.cy, m.coord_transform.scale}},
                    {"centering", vec_json(m.z_centering.column_means)},
                    {"jitter", m.jitter}};
  }

  json h;
  h["v"] = vec_json(m.hyper.v);
  h["v_rho"] = m.hyper.v_rho;
  h["v_phi"] = m.hyper.v_phi;
  h["lambda"] = vec_json(m.lambda);
  h["rho"] = m.rho;
  h["phi"] = m.phi;
  if (m.tau) h["tau"] = {{"shape", m.tau->shape}, {"rate", m.tau->rate}};
  j["hyper"] = h;

  j["posterior"] = {{"mean", vec_json(m.posterior.mean)},
                    {"chol", lower_json(m.posterior.chol)},
                    {"null_var", vec_json(m.posterior.null_var)}};
  j["fit"] = {{"eta", vec_json(m.eta)},
              {"log_lik", m.log_lik},
              {"log_posterior", m.log_posterior},
              {"ed", {{"total", m.ed.total}, {"beta", m.ed.beta}, {"smooth", m.ed.smooth}, {"spatial", m.ed.spatial}}},
              {"bic", m.bic},
              {"evaluations", m.evaluations},
              {"newton_iterations", m.newton_iterations},
              {"clamped", m.clamped},
              {"converged", m.converged},
              {"warnings", m.warnings}};
  return j;
}

inline FittedModel model_from_json(const json& j) {
  using namespace detail;
  const std::string w = "model file";
  if (!j.is_object()) throw DataError(w + " must hold a JSON object");
  if (get<int>(j, "format", w) != kModelFormat)
    throw DataError(w + ": unsupported format " + j["format"].dump());
  try {
    FittedModel m;
    m.spec = spec_from_json(get<json>(j, "spec", w));
    m.n = get<Index>(j, "n", w);

    const json lay = get<json>(j, "layout", w);
    m.layout.beta = json_range(lay.at("beta"));
    m.layout.beta_names = lay.at("beta_names").get<std::vector<std::string>>();
    for (const auto& r : lay.at("smooth")) m.layout.smooth.push_back(json_range(r));
    m.layout.spatial = json_range(lay.at("spatial"));
    m.layout.total = lay.at("total").get<Index>();
    if (m.layout.smooth.size() != m.spec.smooths.size()) throw DataError(w + ": layout and spec disagree on smooths");

    for (const auto& s : get<json>(j, "smooths", w)) {
      BSplineBasis b;
      b.knots = s.at("knots").get<std::vector<double>>();
      b.degree = s.at("degree").get<int>();
      b.num_basis = s.at("num_basis").get<int>();
      b.lo = s.at("lo").get<double>();
      b.hi = s.at("hi").get<double>();
      m.bases.push_back(std::move(b));
      m.smooth_centering.push_back({json_vec(s.at("centering"), "smooth centering")});
      m.smooth_x.push_back(json_vec(s.at("x"), "smooth covariate"));
    }
    if (m.bases.size() != m.spec.smooths.size()) throw DataError(w + ": wrong number of smooth bases");
    if (m.layout.has_spatial()) {
      const json sp = get<json>(j, "spatial", w);
      m.knots.knots = json_mat(sp.at("knots"), 2, "spatial knots");
      m.knots.sites = sp.at("sites").get<std::vector<Index>>();
      m.knots.seed = sp.at("knot_seed").get<std::uint64_t>();
      m.knots.criterion_value = sp.at("criterion").get<double>();
      m.knots.duplicates_collapsed = sp.at("duplicates_collapsed").get<Index>();
      const auto ct = sp.at("coord_transform").get<std::vector<double>>();
      if (ct.size() != 3) throw DataError(w + ": coord_transform needs 3 entries");
      m.coord_transform = {ct[0], ct[1], ct[2]};
      m.z_centering.column_means = json_vec(sp.at("centering"), "spatial centering");
      m.jitter = sp.at("jitter").get<double>();
    }

    const json h = get<json>(j, "hyper", w);
    m.hyper.v = json_vec(h.at("v"), "hyper.v");
    m.hyper.v_rho = h.at("v_rho").get<double>();
    m.hyper.v_phi = h.at("v_phi").get<double>();
    m.lambda = json_vec(h.at("lambda"), "hyper.lambda");
    m.rho = h.at("rho").get<double>();
    m.phi = h.at("phi").get<double>();
    if (h.contains("tau")) m.tau = GammaPosterior{h["tau"].at("shape").get<double>(), h["tau"].at("rate").get<double>()};

    const json p = get<json>(j, "posterior", w);
    m.posterior.reduction = Reduction(m.layout);
    m.posterior.mean = json_vec(p.at("mean"), "posterior mean");
    m.posterior.chol = json_lower(p.at("chol"), "posterior chol");
    m.posterior.null_var = json_vec(p.at("null_var"), "posterior null_var");
    if (m.posterior.mean.size() != m.layout.total || m.posterior.chol.rows() != m.posterior.reduction.reduced_size() ||
        m.posterior.null_var.size() != static_cast<Index>(m.layout.smooth.size()))
      throw DataError(w + ": posterior dimensions do not match the layout");

    const json f = get<json>(j, "fit", w);
    m.eta = json_vec(f.at("eta"), "fitted eta");
    m.log_lik = f.at("log_lik").get<double>();
    m.log_posterior = f.at("log_posterior").get<double>();
    m.ed.total = f["ed"].at("total").get<double>();
    m.ed.beta = f["ed"].at("beta").get<double>();
    m.ed.smooth = f["ed"].at("smooth").get<std::vector<double>>();
    m.ed.spatial = f["ed"].at("spatial").get<double>();
    m.bic = f.at("bic").get<double>();
    m.evaluations = f.at("evaluations").get<int>();
    m.newton_iterations = f.at("newton_iterations").get<int>();
    m.clamped = f.at("clamped").get<Index>();
    m.converged = f.at("converged").get<bool>();
    m.warnings = f.at("warnings").get<std::vector<std::string>>();
    return m;
  } catch (const json::exception& e) {
    throw DataError(w + ": " + e.what());
  }
}

inline void save_model(const FittedModel& m, const std::string& path, const std::string& timestamp = utc_timestamp()) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model file '" + path + "'");
  out << model_to_json(m, timestamp).dump(1) << '\n';
  if (!out) throw DataError("error writing model file '" + path + "'");
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": invalid JSON (" + e.what() + ")");
  }
}

inline FittedModel load_model(const std::string& path) { return model_from_json(read_json_file(path)); }

}  // namespace geoadd
