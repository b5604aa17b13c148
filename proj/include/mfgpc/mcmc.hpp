#pragma once

#include <cmath>
#include <vector>

#include "mfgpc/common.hpp"
#include "mfgpc/laplace.hpp"
#include "mfgpc/likelihood.hpp"
#include "mfgpc/rng.hpp"

namespace mfgpc {

struct McmcConfig {
  int n_samples = 4000;
  int burn_in = 1000;
  int thin = 2;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(n_samples > burn_in && burn_in >= 0)) throw InputError("McmcConfig: need n_samples > burn_in >= 0");
    if (thin < 1) throw InputError("McmcConfig: thin must be >= 1");
  }
};

struct McmcDiagnostics {
  int kept = 0;
  double avg_shrinks = 0.0;  // slice-shrink steps per transition
  double ess = 0.0;          // crude ESS from the log-likelihood trace
};

struct McmcPrediction {
  Vector probabilities;  // per test point: Monte-Carlo mean of sigma(f*_H)
  McmcDiagnostics diag;
};

/// Posterior predictive by elliptical slice sampling over xi: proposals move
/// on ellipses drawn from the N(0, K) prior and are accepted by the
/// likelihood alone, so the sampler has no step-size tuning. For each retained
/// xi, f*_H is drawn from its conditional Gaussian given [f_L(X_L); f_H(X_H)]
/// (the same K~ / k~* algebra as the Laplace predictor, plus the conditional
/// variance) and sigma(f*_H) is averaged.
inline McmcPrediction mcmc_posterior_predict(const FidelityDataset& data, const Hyperparams& hyper,
                                             const Matrix& x_star, const McmcConfig& config,
                                             const FitConfig& fit = {}) {
  config.validate();
  data.validate_shapes();
  const Index n = data.n_low() + 2 * data.n_high();
  const Index nt = data.n_low() + data.n_high();
  const Index m = x_star.rows();
  Rng rng(config.seed);

  // conditional-draw machinery at the test points
  Matrix weights(nt, m);  // column j: K~^{-1} k~*_j
  Vector cond_sd(m);
  const double prior_var = hyper.rho * hyper.rho * hyper.theta_l.amplitude() + hyper.theta_d.amplitude();
  if (nt > 0) {
    Matrix kt = detail::predictive_train_cov(data, hyper);
    auto [chol, jitter] = detail::jittered_cholesky(std::move(kt), fit.jitter_rel, fit.jitter_max_rel,
                                                    "mcmc_posterior_predict");
    const Matrix kx = detail::predictive_cross_cov(data, hyper, x_star);  // m x nt
    weights = chol.triangularView<Eigen::Lower>().solve(kx.transpose());
    chol.triangularView<Eigen::Lower>().transpose().solveInPlace(weights);
    for (Index j = 0; j < m; ++j)
      cond_sd[j] = std::sqrt(std::max(0.0, prior_var - kx.row(j).dot(weights.col(j))));
  } else {
    cond_sd.setConstant(std::sqrt(std::max(0.0, prior_var)));
  }

  Prior prior;
  if (n > 0) prior = build_prior(data, hyper, fit.jitter_rel, fit.jitter_max_rel);

  Vector prob_sum = Vector::Zero(m);
  std::vector<double> loglik_trace;
  long shrink_total = 0;
  int kept = 0;

  Vector xi = Vector::Zero(n);
  double loglik = n > 0 ? log_likelihood(LatentVector::wrap(xi, data), data, hyper.rho) : 0.0;
  const double two_pi = 6.283185307179586476925286766559;

  for (int it = 0; it < config.n_samples; ++it) {
    if (n > 0) {
      // one elliptical slice transition
      const Vector nu = prior.chol_lower.triangularView<Eigen::Lower>() * rng.normal_vector(n);
      const double log_y = loglik + std::log(rng.uniform() + 1e-300);
      double theta = rng.uniform(0.0, two_pi);
      double lo = theta - two_pi, hi = theta;
      int shrinks = 0;
      while (true) {
        const Vector cand = xi * std::cos(theta) + nu * std::sin(theta);
        const double cand_ll = log_likelihood(LatentVector::wrap(cand, data), data, hyper.rho);
        if (cand_ll > log_y) {
          xi = cand;
          loglik = cand_ll;
          break;
        }
        if (++shrinks > 1000)
          throw NumericalError("mcmc_posterior_predict: slice shrink did not terminate; "
                               "the likelihood rejected every proposal on the ellipse");
        if (theta < 0.0)
          lo = theta;
        else
          hi = theta;
        theta = rng.uniform(lo, hi);
      }
      shrink_total += shrinks;
    }

    if (it < config.burn_in || (it - config.burn_in) % config.thin != 0) continue;
    ++kept;
    loglik_trace.push_back(loglik);
    if (nt > 0) {
      const LatentVector lv = LatentVector::wrap(xi, data);
      Vector fhat(nt);
      fhat.head(data.n_low()) = lv.f_low();
      fhat.tail(data.n_high()) = lv.f_high(hyper.rho);
      for (Index j = 0; j < m; ++j) {
        const double mean = weights.col(j).dot(fhat);
        prob_sum[j] += sigmoid(mean + cond_sd[j] * rng.normal());
      }
    } else {
      for (Index j = 0; j < m; ++j) prob_sum[j] += sigmoid(cond_sd[j] * rng.normal());
    }
  }

  McmcPrediction out;
  out.probabilities = prob_sum / static_cast<double>(kept);
  out.diag.kept = kept;
  out.diag.avg_shrinks = static_cast<double>(shrink_total) / static_cast<double>(config.n_samples);

  // ESS from the autocorrelation of the log-likelihood trace
  if (kept > 2 && n > 0) {
    double mean = 0.0;
    for (double v : loglik_trace) mean += v;
    mean /= static_cast<double>(kept);
    double var = 0.0;
    for (double v : loglik_trace) var += (v - mean) * (v - mean);
    double rho_sum = 0.0;
    if (var > 0.0) {
      for (int lag = 1; lag < kept / 2; ++lag) {
        double c = 0.0;
        for (int i = 0; i + lag < kept; ++i)
          c += (loglik_trace[static_cast<std::size_t>(i)] - mean) *
               (loglik_trace[static_cast<std::size_t>(i + lag)] - mean);
        const double r = c / var;
        if (r < 0.0) break;
        rho_sum += r;
      }
    }
    out.diag.ess = static_cast<double>(kept) / (1.0 + 2.0 * rho_sum);
  } else {
    out.diag.ess = kept;
  }
  return out;
}

}  // namespace mfgpc
