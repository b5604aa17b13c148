#pragma once

#include <cmath>
#include <functional>
#include <limits>

#include "mfgpc/common.hpp"

namespace mfgpc {

struct AscentConfig {
  int max_steps = 200;
  double grad_tol = 1e-5;
  double step_tol = 1e-9;
  double armijo_c = 1e-4;
  int max_backtracks = 30;
};

struct AscentResult {
  Vector x;
  double value = -std::numeric_limits<double>::infinity();
  Vector grad;
  int steps = 0;
  bool converged = false;     // grad_tol or step_tol hit (not max_steps)
  int evaluations = 0;
};

/// BFGS ascent with Armijo backtracking. The objective is
///   double f(const Vector& x, Vector* grad)
/// where grad may be null for value-only probes; evaluation failure is
/// signaled by throwing or returning a non-finite value and rejects the probe.
/// Every accepted step strictly increases the objective.
template <typename F>
AscentResult bfgs_maximize(F&& f, Vector x0, const AscentConfig& cfg = {}) {
  const Index n = x0.size();
  AscentResult res;
  res.x = std::move(x0);

  auto eval = [&](const Vector& x, Vector* grad) -> double {
    ++res.evaluations;
    try {
      const double v = f(x, grad);
      return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };

  Vector g(n);
  res.value = eval(res.x, &g);
  if (!std::isfinite(res.value))
    throw NumericalError("bfgs_maximize: objective not evaluable at the initial point");
  res.grad = g;

  Matrix h = Matrix::Identity(n, n);  // approximate inverse Hessian of -f
  for (int step = 0; step < cfg.max_steps; ++step) {
    if (g.cwiseAbs().maxCoeff() < cfg.grad_tol) {
      res.converged = true;
      break;
    }
    Vector p = h * g;
    double slope = g.dot(p);
    if (!(slope > 0.0)) {  // H lost positive definiteness; reset
      h.setIdentity();
      p = g;
      slope = g.dot(g);
      if (!(slope > 0.0)) {
        res.converged = true;
        break;
      }
    }

    double t = 1.0;
    bool accepted = false;
    Vector x_new;
    double v_new = 0.0;
    auto line_search = [&]() {
      t = 1.0;
      for (int bt = 0; bt <= cfg.max_backtracks; ++bt) {
        x_new = res.x + t * p;
        v_new = eval(x_new, nullptr);
        if (v_new >= res.value + cfg.armijo_c * t * slope && v_new > res.value) {
          accepted = true;
          return;
        }
        t *= 0.5;
      }
    };
    line_search();
    if (!accepted && !h.isIdentity(0.0)) {
      // curvature estimate led nowhere; retry along the raw gradient
      h.setIdentity();
      p = g;
      slope = g.dot(g);
      line_search();
    }
    if (!accepted || (t * p).norm() < cfg.step_tol) {
      res.converged = true;
      break;
    }

    Vector g_new(n);
    const double v_check = eval(x_new, &g_new);
    if (!std::isfinite(v_check)) {
      res.converged = true;
      break;
    }

    const Vector s = x_new - res.x;
    const Vector y = g - g_new;  // gradient-of(-f) difference
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const Vector hy = h * y;
      h -= (hy * s.transpose() + s * hy.transpose()) / sy;
      h += ((1.0 + y.dot(hy) / sy) / sy) * (s * s.transpose());
    }
    res.x = x_new;
    res.value = v_check;
    g = g_new;
    res.grad = g;
    ++res.steps;
  }
  return res;
}

/// Median pairwise Euclidean distance; the usual length-scale heuristic.
inline double median_pairwise_distance(const Matrix& x) {
  const Index n = x.rows();
  if (n < 2) return 1.0;
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) d.push_back((x.row(i) - x.row(j)).norm());
  auto mid = d.begin() + static_cast<long>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double med = *mid;
  if (!(med > 0.0)) med = 1.0;
  return med;
}

}  // namespace mfgpc
