#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mfgpc/common.hpp"
#include "mfgpc/laplace.hpp"
#include "mfgpc/optim.hpp"
#include "mfgpc/rng.hpp"

namespace mfgpc {

/// Model selection configuration. Internal search coordinates are
/// (rho, s_l, log sigma_l, s_d, log sigma_d), all unconstrained.
struct OptConfig {
  int restarts = 5;
  int max_steps = 200;
  double step_tol = 1e-9;
  double grad_tol = 1e-5;
  std::uint64_t seed = 0;
  std::vector<double> rho_init_set = {1.0, 0.5, -1.0};
  // log sigma drawn uniformly in log(median distance) + this interval
  std::array<double, 2> log_sigma_init_range = {std::log(0.1), std::log(10.0)};
  std::array<double, 2> s_init_range = {-1.0, 3.0};
  // Search box, enforced by a smooth quadratic penalty. Keeps the optimizer
  // out of the sigma -> 0, amplitude -> infinity corner, where the Laplace
  // evidence of hard-labeled data degenerates to 0 (white-noise kernel that
  // memorizes the training set). log sigma bounds are relative to the median
  // pairwise distance.
  std::array<double, 2> s_bounds = {-6.0, 4.0};
  double rho_bound = 30.0;
  std::array<double, 2> log_sigma_bounds = {std::log(0.05), std::log(20.0)};
  double barrier_weight = 50.0;
  FitConfig fit;
  int jobs = 1;

  void validate() const {
    if (restarts < 1) throw InputError("OptConfig: restarts must be >= 1");
    if (log_sigma_init_range[1] < log_sigma_init_range[0] || s_init_range[1] < s_init_range[0])
      throw InputError("OptConfig: init ranges must be non-empty");
  }
};

namespace detail {

inline Hyperparams unpack_hyper(const Vector& x) {
  Hyperparams h;
  h.rho = x[0];
  h.theta_l = RbfParams::from_log(x[1], x[2]);
  h.theta_d = RbfParams::from_log(x[3], x[4]);
  return h;
}

struct RestartOutcome {
  bool ok = false;
  double value = -std::numeric_limits<double>::infinity();
  Vector x;
  Vector grad;
  int steps = 0;
  std::string error;
};

/// Quadratic penalty outside [lo, hi]; returns the value, accumulates the
/// derivative.
inline double box_penalty(double x, double lo, double hi, double weight, double* dpen) {
  if (x > hi) {
    if (dpen) *dpen += 2.0 * weight * (x - hi);
    return weight * (x - hi) * (x - hi);
  }
  if (x < lo) {
    if (dpen) *dpen += 2.0 * weight * (x - lo);
    return weight * (x - lo) * (x - lo);
  }
  return 0.0;
}

}  // namespace detail

/// Maximize the approximate log marginal likelihood over
/// (rho, s_l, sigma_l, s_d, sigma_d) with analytic gradients, multi-restart.
/// Restart 0 is the deterministic default (rho=1, s=0, sigma=median heuristic);
/// the rest derive their RNG stream from (seed, restart index). Returns the
/// restart with the highest converged objective (earliest wins ties).
inline FittedModel optimize(const FidelityDataset& data, const OptConfig& config = {}) {
  config.validate();
  data.validate_for_training();

  Matrix x_all(data.n_low() + data.n_high(), data.dim());
  if (data.n_low() > 0) x_all.topRows(data.n_low()) = data.X_low;
  if (data.n_high() > 0) x_all.bottomRows(data.n_high()) = data.X_high;
  const double scale_l = median_pairwise_distance(x_all);
  const double scale_d = data.n_high() > 1 ? median_pairwise_distance(data.X_high) : scale_l;

  auto run_restart = [&](int r) -> detail::RestartOutcome {
    detail::RestartOutcome out;
    Vector x0(5);
    if (r == 0) {
      x0 << 1.0, 0.0, std::log(scale_l), 0.0, std::log(scale_d);
    } else {
      Rng rng(derive_seed(config.seed, 0x7265737461727453ULL, static_cast<std::uint64_t>(r)));
      const double rho = config.rho_init_set.empty()
                             ? 1.0
                             : config.rho_init_set[static_cast<std::size_t>(r - 1) % config.rho_init_set.size()];
      x0 << rho, rng.uniform(config.s_init_range[0], config.s_init_range[1]),
          std::log(scale_l) + rng.uniform(config.log_sigma_init_range[0], config.log_sigma_init_range[1]),
          rng.uniform(config.s_init_range[0], config.s_init_range[1]),
          std::log(scale_d) + rng.uniform(config.log_sigma_init_range[0], config.log_sigma_init_range[1]);
    }

    std::optional<Vector> warm;
    auto objective = [&](const Vector& x, Vector* grad) -> double {
      FittedModel model;
      try {
        model = fit_mode(data, detail::unpack_hyper(x), config.fit, warm);
      } catch (const ConvergenceError&) {
        model = fit_mode(data, detail::unpack_hyper(x), config.fit);  // retry cold
      }
      Vector dpen = Vector::Zero(5);
      const double w = config.barrier_weight;
      double penalty = detail::box_penalty(x[0], -config.rho_bound, config.rho_bound, w, &dpen[0]);
      penalty += detail::box_penalty(x[1], config.s_bounds[0], config.s_bounds[1], w, &dpen[1]);
      penalty += detail::box_penalty(x[2], std::log(scale_l) + config.log_sigma_bounds[0],
                                     std::log(scale_l) + config.log_sigma_bounds[1], w, &dpen[2]);
      penalty += detail::box_penalty(x[3], config.s_bounds[0], config.s_bounds[1], w, &dpen[3]);
      penalty += detail::box_penalty(x[4], std::log(scale_d) + config.log_sigma_bounds[0],
                                     std::log(scale_d) + config.log_sigma_bounds[1], w, &dpen[4]);
      if (grad) {
        const HyperGradients hg = grad_hyper(model);
        (*grad)[0] = hg.d_rho - dpen[0];
        (*grad)[1] = hg.d_s_l - dpen[1];
        (*grad)[2] = hg.d_sigma_l * model.hyper.theta_l.sigma() - dpen[2];
        (*grad)[3] = hg.d_s_d - dpen[3];
        (*grad)[4] = hg.d_sigma_d * model.hyper.theta_d.sigma() - dpen[4];
      }
      warm = model.xi_hat.values;  // adjacent evaluations share most of the mode
      return model.log_marginal - penalty;
    };

    AscentConfig acfg;
    acfg.max_steps = config.max_steps;
    acfg.grad_tol = config.grad_tol;
    acfg.step_tol = config.step_tol;
    try {
      AscentResult res = bfgs_maximize(objective, x0, acfg);
      out.ok = true;
      out.value = res.value;
      out.x = res.x;
      out.grad = res.grad;
      out.steps = res.steps;
    } catch (const std::exception& e) {
      out.error = e.what();
    }
    return out;
  };

  std::vector<detail::RestartOutcome> outcomes(static_cast<std::size_t>(config.restarts));
  if (config.jobs > 1 && config.restarts > 1) {
    std::atomic<int> next{0};
    auto worker = [&] {
      int r;
      while ((r = next.fetch_add(1)) < config.restarts) outcomes[static_cast<std::size_t>(r)] = run_restart(r);
    };
    std::vector<std::thread> pool;
    const int nthreads = std::min(config.jobs, config.restarts);
    pool.reserve(static_cast<std::size_t>(nthreads));
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  } else {
    for (int r = 0; r < config.restarts; ++r) outcomes[static_cast<std::size_t>(r)] = run_restart(r);
  }

  int best = -1;
  for (int r = 0; r < config.restarts; ++r) {
    const auto& o = outcomes[static_cast<std::size_t>(r)];
    if (!o.ok) continue;
    if (best < 0 || o.value > outcomes[static_cast<std::size_t>(best)].value) best = r;
  }
  if (best < 0) {
    std::string diag = "optimize: every restart diverged;";
    for (int r = 0; r < config.restarts; ++r)
      diag += " [restart " + std::to_string(r) + ": " + outcomes[static_cast<std::size_t>(r)].error + "]";
    throw NumericalError(diag);
  }

  return fit_mode(data, detail::unpack_hyper(outcomes[static_cast<std::size_t>(best)].x), config.fit);
}

}  // namespace mfgpc
