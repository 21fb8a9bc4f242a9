#pragma once

// Box-constrained Nelder-Mead minimizer. Trial points are projected onto the
// box; non-finite objective values count as +infinity (rejected points).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace geoadd {

using Eigen::Index;
using Eigen::VectorXd;

struct NelderMeadOptions {
  int max_evals = 500;
  double simplex_tol = 1e-4;  // max-norm distance of every vertex from the best one
  double value_tol = 1e-9;    // relative spread of vertex values; 0 disables
  double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;
};

struct NelderMeadResult {
  VectorXd x;
  double fx = std::numeric_limits<double>::infinity();
  int evals = 0;
  int iterations = 0;
  bool converged = false;
};

inline NelderMeadResult nelder_mead(const std::function<double(const VectorXd&)>& f, const VectorXd& x0,
                                    const VectorXd& step, const VectorXd& lo, const VectorXd& hi,
                                    const NelderMeadOptions& opt = {}) {
  const Index d = x0.size();
  NelderMeadResult res;
  auto project = [&](VectorXd x) {
    for (Index i = 0; i < d; ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
    return x;
  };
  auto eval = [&](const VectorXd& x) {
    ++res.evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<VectorXd> pts;
  std::vector<double> vals;
  pts.push_back(project(x0));
  vals.push_back(eval(pts[0]));
  if (d == 0) {
    res.x = pts[0];
    res.fx = vals[0];
    res.converged = true;
    return res;
  }
  for (Index i = 0; i < d; ++i) {
    VectorXd x = pts[0];
    x[i] += step[i];
    if (x[i] > hi[i]) x[i] = pts[0][i] - step[i];
    pts.push_back(project(x));
    vals.push_back(eval(pts.back()));
  }

  std::vector<std::size_t> order(static_cast<std::size_t>(d + 1));
  auto sort_simplex = [&]() {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    std::vector<VectorXd> p2;
    std::vector<double> v2;
    for (auto k : order) p2.push_back(pts[k]), v2.push_back(vals[k]);
    pts.swap(p2);
    vals.swap(v2);
  };
  auto size = [&]() {
    double s = 0.0;
    for (Index i = 1; i <= d; ++i) s = std::max(s, (pts[i] - pts[0]).cwiseAbs().maxCoeff());
    return s;
  };

  while (true) {
    sort_simplex();
    if (size() < opt.simplex_tol) {
      res.converged = true;
      break;
    }
    if (opt.value_tol > 0.0 && res.iterations > d && std::isfinite(vals[d]) &&
        vals[d] - vals[0] <= opt.value_tol * std::max(1.0, std::abs(vals[0]))) {
      res.converged = true;
      break;
    }
    if (res.evals >= opt.max_evals) break;
    ++res.iterations;

    VectorXd centroid = VectorXd::Zero(d);
    for (Index i = 0; i < d; ++i) centroid += pts[i];
    centroid /= static_cast<double>(d);
    const VectorXd& worst = pts[d];

    const VectorXd xr = project(centroid + opt.alpha * (centroid - worst));
    const double fr = eval(xr);
    if (fr < vals[0]) {
      const VectorXd xe = project(centroid + opt.gamma * (xr - centroid));
      const double fe = eval(xe);
      if (fe < fr) pts[d] = xe, vals[d] = fe;
      else pts[d] = xr, vals[d] = fr;
      continue;
    }
    if (fr < vals[d - 1]) {
      pts[d] = xr, vals[d] = fr;
      continue;
    }
    if (fr < vals[d]) {
      const VectorXd xc = project(centroid + opt.rho * (xr - centroid));
      const double fc = eval(xc);
      if (fc <= fr) {
        pts[d] = xc, vals[d] = fc;
        continue;
      }
    } else {
      const VectorXd xc = project(centroid + opt.rho * (worst - centroid));
      const double fc = eval(xc);
      if (fc < vals[d]) {
        pts[d] = xc, vals[d] = fc;
        continue;
      }
    }
    for (Index i = 1; i <= d; ++i) {
      pts[i] = project(pts[0] + opt.sigma * (pts[i] - pts[0]));
      vals[i] = eval(pts[i]);
    }
  }
  res.x = pts[0];
  res.fx = vals[0];
  return res;
}

}  // namespace geoadd
