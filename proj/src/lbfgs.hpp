#pragma once

// Minimal limited-memory BFGS minimiser with backtracking Armijo search.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>

#include <Eigen/Dense>

namespace ucd::detail {

// Returns f(x) and writes the gradient. Non-finite values are treated as a
// failed step by the line search.
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
};

inline LbfgsResult lbfgs_minimize(const Objective& f, Eigen::VectorXd x, int max_iterations,
                                  int memory = 8, double gradient_tolerance = 1e-6) {
  Eigen::VectorXd g(x.size());
  double fx = f(x, g);
  LbfgsResult result{x, fx, 0};
  if (!std::isfinite(fx)) return result;

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  for (int it = 0; it < max_iterations; ++it) {
    if (g.lpNorm<Eigen::Infinity>() < gradient_tolerance) break;

    // Two-loop recursion for the search direction.
    Eigen::VectorXd q = g;
    std::vector<double> a(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      a[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= a[i] * y_hist[i];
    }
    if (!s_hist.empty()) {
      q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    } else {
      q /= std::max(1.0, g.norm());
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double b = rho_hist[i] * y_hist[i].dot(q);
      q += s_hist[i] * (a[i] - b);
    }
    Eigen::VectorXd dir = -q;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      dir = -g;
      slope = -g.squaredNorm();
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    double step = 1.0;
    Eigen::VectorXd x_new, g_new(x.size());
    double f_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls) {
      x_new = x + step * dir;
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    const double change = fx - f_new;
    x = x_new;
    g = g_new;
    fx = f_new;
    result.iterations = it + 1;
    if (change < 1e-10 * std::max(1.0, std::abs(fx))) break;
  }
  result.x = x;
  result.value = fx;
  return result;
}

}  // namespace ucd::detail
