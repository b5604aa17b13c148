#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "mfgpc/common.hpp"
#include "mfgpc/dataset.hpp"
#include "mfgpc/hyperopt.hpp"
#include "mfgpc/laplace.hpp"
#include "mfgpc/optim.hpp"
#include "mfgpc/rng.hpp"

namespace mfgpc {

/// Ordinary Laplace GPC. Implemented as the multi-fidelity fitter on a dataset
/// with an empty high-fidelity block, so the single-fidelity path exercises
/// the same machinery it serves as an oracle for.
struct SfModel {
  SfDataset data;
  RbfParams params;
  FittedModel inner;

  double log_marginal() const { return inner.log_marginal; }
  const Vector& f_hat() const { return inner.xi_hat.values; }
};

namespace detail {
inline FidelityDataset as_low_only(const SfDataset& data) {
  FidelityDataset out;
  out.X_low = data.X;
  out.y_low = data.y;
  out.X_high.resize(0, data.X.cols());
  out.y_high.resize(0);
  return out;
}
}  // namespace detail

inline SfModel sf_fit(const SfDataset& data, const RbfParams& params, const FitConfig& config = {}) {
  Hyperparams hyper;
  hyper.rho = 1.0;  // inert with no high-fidelity block
  hyper.theta_l = params;
  hyper.theta_d = RbfParams{};
  SfModel model;
  model.data = data;
  model.params = params;
  model.inner = fit_mode(detail::as_low_only(data), hyper, config);
  return model;
}

/// Latent mean k(x*, X)' K^{-1} f^ = k(x*, X)' alpha.
inline std::vector<PredictionScore> sf_predict(const SfModel& model, const Matrix& x_star) {
  if (x_star.cols() != model.data.X.cols())
    throw InputError("sf_predict: test dimensionality does not match training data");
  const Matrix kx = kernel_matrix(model.params, x_star, model.data.X);
  std::vector<PredictionScore> out(static_cast<std::size_t>(x_star.rows()));
  for (Index i = 0; i < x_star.rows(); ++i) {
    const double mean = model.data.n() > 0 ? kx.row(i).dot(model.inner.alpha) : 0.0;
    out[static_cast<std::size_t>(i)] = PredictionScore{mean, sigmoid(mean), mean > 0.0 ? 1 : 0};
  }
  return out;
}

/// Tune (s, sigma) by multi-restart gradient ascent on the Laplace marginal
/// likelihood; restart 0 is the median-heuristic default.
inline SfModel sf_optimize(const SfDataset& data, const OptConfig& config = {}) {
  data.validate_for_training();
  const double scale = median_pairwise_distance(data.X);
  const FidelityDataset low_only = detail::as_low_only(data);

  struct Outcome {
    bool ok = false;
    double value = -std::numeric_limits<double>::infinity();
    Vector x;
    std::string error;
  };
  std::vector<Outcome> outcomes(static_cast<std::size_t>(config.restarts));

  for (int r = 0; r < config.restarts; ++r) {
    Vector x0(2);
    if (r == 0) {
      x0 << 0.0, std::log(scale);
    } else {
      Rng rng(derive_seed(config.seed, 0x73665f7265737461ULL, static_cast<std::uint64_t>(r)));
      x0 << rng.uniform(config.s_init_range[0], config.s_init_range[1]),
          std::log(scale) + rng.uniform(config.log_sigma_init_range[0], config.log_sigma_init_range[1]);
    }
    std::optional<Vector> warm;
    auto objective = [&](const Vector& x, Vector* grad) -> double {
      Hyperparams hyper;
      hyper.theta_l = RbfParams::from_log(x[0], x[1]);
      FittedModel model;
      try {
        model = fit_mode(low_only, hyper, config.fit, warm);
      } catch (const ConvergenceError&) {
        model = fit_mode(low_only, hyper, config.fit);
      }
      Vector dpen = Vector::Zero(2);
      const double w = config.barrier_weight;
      double penalty = detail::box_penalty(x[0], config.s_bounds[0], config.s_bounds[1], w, &dpen[0]);
      penalty += detail::box_penalty(x[1], std::log(scale) + config.log_sigma_bounds[0],
                                     std::log(scale) + config.log_sigma_bounds[1], w, &dpen[1]);
      if (grad) {
        const HyperGradients hg = grad_hyper(model);
        (*grad)[0] = hg.d_s_l - dpen[0];
        (*grad)[1] = hg.d_sigma_l * model.hyper.theta_l.sigma() - dpen[1];
      }
      warm = model.xi_hat.values;
      return model.log_marginal - penalty;
    };
    AscentConfig acfg;
    acfg.max_steps = config.max_steps;
    acfg.grad_tol = config.grad_tol;
    acfg.step_tol = config.step_tol;
    auto& out = outcomes[static_cast<std::size_t>(r)];
    try {
      AscentResult res = bfgs_maximize(objective, x0, acfg);
      out.ok = true;
      out.value = res.value;
      out.x = res.x;
    } catch (const std::exception& e) {
      out.error = e.what();
    }
  }

  int best = -1;
  for (int r = 0; r < config.restarts; ++r) {
    const auto& o = outcomes[static_cast<std::size_t>(r)];
    if (o.ok && (best < 0 || o.value > outcomes[static_cast<std::size_t>(best)].value)) best = r;
  }
  if (best < 0) {
    std::string diag = "sf_optimize: every restart diverged;";
    for (int r = 0; r < config.restarts; ++r)
      diag += " [restart " + std::to_string(r) + ": " + outcomes[static_cast<std::size_t>(r)].error + "]";
    throw NumericalError(diag);
  }
  const Vector& x = outcomes[static_cast<std::size_t>(best)].x;
  return sf_fit(data, RbfParams::from_log(x[0], x[1]), config.fit);
}

// --- generic-Gram single-fidelity Laplace ------------------------------------
//
// Independent diagonal-W code path over a caller-supplied Gram matrix. This is
// the oracle side of the degeneracy checks (e.g. a composite rho^2 k_l + k_d
// kernel) and is deliberately not routed through the multi-fidelity fitter.

struct SfGramModel {
  Vector f_hat;
  Vector alpha;  // K^{-1} f_hat
  double log_marginal = 0.0;
  int newton_iters = 0;
};

inline SfGramModel sf_fit_gram(Matrix gram /* jitter included by caller */, const IntVector& y,
                               const FitConfig& config = {}) {
  const Index n = gram.rows();
  if (y.size() != n) throw InputError("sf_fit_gram: label count does not match Gram size");
  Eigen::LLT<Matrix> llt_k(gram);
  if (llt_k.info() != Eigen::Success) throw NumericalError("sf_fit_gram: Gram is not positive definite");

  Vector f = Vector::Zero(n);
  Vector a = Vector::Zero(n);
  auto lambda_of = [&](const Vector& fv) {
    double s = 0.0;
    for (Index i = 0; i < n; ++i) s += log_sigmoid((2.0 * y[i] - 1.0) * fv[i]);
    return s;
  };
  double psi = lambda_of(f);
  Vector w_sqrt_diag(n);
  double log_det_b = 0.0;
  int iters = 0;

  for (int it = 0; it <= config.max_iters; ++it) {
    Vector g(n), w(n);
    for (Index i = 0; i < n; ++i) {
      const auto sf = sigmoid_family(f[i]);
      g[i] = y[i] - sf.sigma;
      w[i] = sf.omega;
    }
    const double grad_norm = n > 0 ? (g - a).cwiseAbs().maxCoeff() : 0.0;
    w_sqrt_diag = w.cwiseSqrt();
    Matrix b = w_sqrt_diag.asDiagonal() * gram * w_sqrt_diag.asDiagonal();
    b.diagonal().array() += 1.0;
    Eigen::LLT<Matrix> llt_b(b);
    if (llt_b.info() != Eigen::Success) throw NumericalError("sf_fit_gram: factorization of B failed");
    if (grad_norm < config.tol || it == config.max_iters) {
      if (grad_norm >= config.tol)
        throw ConvergenceError("sf_fit_gram: no convergence", f, grad_norm, iters);
      log_det_b = 0.0;
      for (Index i = 0; i < n; ++i) log_det_b += 2.0 * std::log(llt_b.matrixLLT()(i, i));
      break;
    }
    const Vector rhs = w.cwiseProduct(f) + g;
    const Vector kb = gram * rhs;
    const Vector a_full = rhs - w_sqrt_diag.cwiseProduct(llt_b.solve(w_sqrt_diag.cwiseProduct(kb)));
    const Vector f_full = gram * a_full;
    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h <= config.max_halvings; ++h) {
      const Vector f_t = f + t * (f_full - f);
      const Vector a_t = a + t * (a_full - a);
      const double psi_t = lambda_of(f_t) - 0.5 * f_t.dot(a_t);
      if (psi_t > psi) {
        f = f_t;
        a = a_t;
        psi = psi_t;
        accepted = true;
        ++iters;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      const double decrement = 0.5 * (g - a).dot(f_full - f);
      if (grad_norm < 10.0 * config.tol || decrement < 1e-12 * (1.0 + std::abs(psi))) {
        log_det_b = 0.0;
        for (Index i = 0; i < n; ++i) log_det_b += 2.0 * std::log(llt_b.matrixLLT()(i, i));
        break;
      }
      throw ConvergenceError("sf_fit_gram: step-halving stalled", f, grad_norm, iters);
    }
  }

  SfGramModel model;
  model.f_hat = f;
  model.alpha = a;
  model.newton_iters = iters;
  model.log_marginal = -0.5 * f.dot(a) + lambda_of(f) - 0.5 * log_det_b;
  return model;
}

/// Latent means at test points given the cross Gram k(x*, X).
inline Vector sf_predict_gram(const SfGramModel& model, const Matrix& cross_gram) {
  return cross_gram * model.alpha;
}

}  // namespace mfgpc
