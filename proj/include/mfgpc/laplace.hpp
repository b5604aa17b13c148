#pragma once

#include <Eigen/Cholesky>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mfgpc/common.hpp"
#include "mfgpc/dataset.hpp"
#include "mfgpc/kernels.hpp"
#include "mfgpc/likelihood.hpp"

namespace mfgpc {

struct Hyperparams {
  double rho = 1.0;
  RbfParams theta_l;
  RbfParams theta_d;
};

struct FitConfig {
  double tol = 1e-6;             // convergence: ||grad Psi||_inf < tol
  int max_iters = 100;
  int max_halvings = 20;
  double jitter_rel = 1e-8;      // initial jitter, relative to mean diagonal
  double jitter_max_rel = 1e-4;  // escalation cap (x10 steps)
};

/// Jittered prior covariance over xi with its Cholesky factor.
struct Prior {
  Matrix K;           // includes jitter on the diagonal
  Matrix chol_lower;  // L, L L^T = K
  double jitter = 0.0;

  Vector solve(const Vector& v) const {
    Vector x = chol_lower.triangularView<Eigen::Lower>().solve(v);
    chol_lower.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
    return x;
  }
};

namespace detail {

/// Cholesky with the escalating jitter ladder. `raw` is consumed.
inline std::pair<Matrix, double> jittered_cholesky(Matrix raw, double jitter_rel,
                                                   double jitter_max_rel, const char* what) {
  const Index n = raw.rows();
  if (n == 0) return {Matrix(0, 0), 0.0};
  const double mean_diag = raw.diagonal().mean();
  double rel = jitter_rel;
  double added = 0.0;
  while (true) {
    const double eps = rel * mean_diag;
    raw.diagonal().array() += eps - added;
    added = eps;
    Eigen::LLT<Matrix> llt(raw);
    if (llt.info() == Eigen::Success) return {Matrix(llt.matrixL()), added};
    if (rel >= jitter_max_rel)
      throw NumericalError(std::string(what) +
                           ": Cholesky failed after jitter escalation to rel=" + std::to_string(rel) +
                           " (mean diagonal " + std::to_string(mean_diag) + ", n=" + std::to_string(n) + ")");
    rel *= 10.0;
  }
}

}  // namespace detail

/// K = blockdiag(k_l(X, X), k_d(X_H, X_H)) with X = [X_L; X_H], plus jitter.
inline Prior build_prior(const FidelityDataset& data, const Hyperparams& hyper,
                         double jitter_rel = FitConfig{}.jitter_rel,
                         double jitter_max_rel = FitConfig{}.jitter_max_rel) {
  const Index nl = data.n_low(), nh = data.n_high();
  const Index nx = nl + nh, n = nl + 2 * nh;
  Prior prior;
  prior.K = Matrix::Zero(n, n);
  if (nx > 0) {
    Matrix X(nx, data.dim());
    if (nl > 0) X.topRows(nl) = data.X_low;
    if (nh > 0) X.bottomRows(nh) = data.X_high;
    prior.K.topLeftCorner(nx, nx) = kernel_matrix(hyper.theta_l, X);
  }
  if (nh > 0) prior.K.bottomRightCorner(nh, nh) = kernel_matrix(hyper.theta_d, data.X_high);

  auto [chol, jitter] = detail::jittered_cholesky(prior.K, jitter_rel, jitter_max_rel, "build_prior");
  prior.K.diagonal().array() += jitter;
  prior.chol_lower = std::move(chol);
  prior.jitter = jitter;
  return prior;
}

struct FittedModel {
  FidelityDataset data;
  Hyperparams hyper;
  FitConfig config;
  LatentVector xi_hat;
  Vector alpha;              // K^{-1} xi_hat, tracked through the Newton solves
  CurvatureW w_at_mode;
  Prior prior;
  double log_marginal = 0.0;
  double log_det_b = 0.0;
  int newton_iters = 0;
  double grad_inf_norm = 0.0;
  bool converged = false;
};

/// Newton maximization of Psi(xi) = lambda(xi) - xi' K^{-1} xi / 2 in the
/// stabilized form: every solve goes through B = I + W^{1/2} K W^{1/2}, so K
/// itself is never inverted inside the loop. Backtracking step-halving keeps
/// Psi non-decreasing.
inline FittedModel fit_mode(const FidelityDataset& data, const Hyperparams& hyper,
                            const FitConfig& config = {},
                            const std::optional<Vector>& xi0 = std::nullopt) {
  data.validate_shapes();
  if (!std::isfinite(hyper.rho)) throw InputError("fit_mode: rho must be finite");

  FittedModel model;
  model.data = data;
  model.hyper = hyper;
  model.config = config;
  model.prior = build_prior(data, hyper, config.jitter_rel, config.jitter_max_rel);
  const Index n = data.n_low() + 2 * data.n_high();

  LatentVector xi = LatentVector::zeros(data);
  Vector a = Vector::Zero(n);
  if (xi0) {
    xi = LatentVector::wrap(*xi0, data);
    a = model.prior.solve(xi.values);
  }
  double psi = log_likelihood(xi, data, hyper.rho) - 0.5 * xi.values.dot(a);

  const Matrix& K = model.prior.K;
  CurvatureW w;
  Eigen::LLT<Matrix> llt_b;
  double grad_norm = std::numeric_limits<double>::infinity();
  int iters = 0;
  bool converged = false;
  bool psi_flat = false;

  for (int it = 0; it <= config.max_iters; ++it) {
    const Vector g = grad_log_likelihood(xi, data, hyper.rho);
    const Vector grad_psi = g - a;
    grad_norm = n > 0 ? grad_psi.cwiseAbs().maxCoeff() : 0.0;
    w = curvature(xi, data, hyper.rho);
    const WSqrt s = WSqrt::from(w);
    Matrix b_mat = s.sandwich(K);
    b_mat.diagonal().array() += 1.0;
    llt_b.compute(b_mat);
    if (llt_b.info() != Eigen::Success)
      throw NumericalError("fit_mode: factorization of B failed (B should be I + PSD)");

    if (grad_norm < config.tol || psi_flat || n == 0) {
      converged = true;
      break;
    }
    if (it == config.max_iters) break;

    // Newton target: xi_new = K (b - W^{1/2} B^{-1} W^{1/2} K b), b = W xi + grad lambda
    const Vector rhs = w.apply(xi.values) + g;
    const Vector kb = K * rhs;
    const Vector a_full = rhs - s.apply(llt_b.solve(s.apply(kb)));
    const Vector xi_full = K * a_full;

    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h <= config.max_halvings; ++h) {
      const Vector xi_t = xi.values + t * (xi_full - xi.values);
      const Vector a_t = a + t * (a_full - a);
      const LatentVector cand = LatentVector::wrap(xi_t, data);
      const double psi_t = log_likelihood(cand, data, hyper.rho) - 0.5 * xi_t.dot(a_t);
      if (psi_t > psi) {
        psi_flat = (psi_t - psi) < config.tol * config.tol;
        xi = cand;
        a = a_t;
        psi = psi_t;
        accepted = true;
        ++iters;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // no ascent left; converged if the Newton decrement is at roundoff scale
      const double decrement = 0.5 * (g - a).dot(xi_full - xi.values);
      if (grad_norm < 10.0 * config.tol || decrement < 1e-12 * (1.0 + std::abs(psi))) {
        converged = true;
        break;
      }
      throw ConvergenceError("fit_mode: step-halving found no Psi increase at iteration " +
                                 std::to_string(it) + " (grad inf-norm " + std::to_string(grad_norm) + ")",
                             xi.values, grad_norm, iters);
    }
  }

  if (!converged)
    throw ConvergenceError("fit_mode: no convergence after " + std::to_string(config.max_iters) +
                               " iterations (grad inf-norm " + std::to_string(grad_norm) + ")",
                           xi.values, grad_norm, iters);

  model.xi_hat = xi;
  model.alpha = a;
  model.w_at_mode = w;
  model.newton_iters = iters;
  model.grad_inf_norm = grad_norm;
  model.converged = true;
  model.log_det_b = 0.0;
  for (Index i = 0; i < n; ++i) model.log_det_b += 2.0 * std::log(llt_b.matrixLLT()(i, i));
  model.log_marginal = -0.5 * xi.values.dot(a) + log_likelihood(xi, data, hyper.rho) - 0.5 * model.log_det_b;
  return model;
}

/// Eq.-(10) value recomputed from the model's stored parts.
inline double log_marginal(const FittedModel& model) {
  const Vector a = model.prior.solve(model.xi_hat.values);
  const WSqrt s = WSqrt::from(model.w_at_mode);
  Matrix b_mat = s.sandwich(model.prior.K);
  b_mat.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(b_mat);
  if (llt.info() != Eigen::Success) throw NumericalError("log_marginal: factorization of B failed");
  double log_det = 0.0;
  for (Index i = 0; i < b_mat.rows(); ++i) log_det += 2.0 * std::log(llt.matrixLLT()(i, i));
  return -0.5 * model.xi_hat.values.dot(a) + log_likelihood(model.xi_hat, model.data, model.hyper.rho) -
         0.5 * log_det;
}

struct HyperGradients {
  double d_rho = 0.0;
  double d_s_l = 0.0;
  double d_sigma_l = 0.0;
  double d_s_d = 0.0;
  double d_sigma_d = 0.0;
};

/// Analytic gradient of the approximate log marginal likelihood w.r.t.
/// (rho, s_l, sigma_l, s_d, sigma_d) at the fitted mode.
///
/// (K^{-1}+W)^{-1} is formed as K - K W^{1/2} B^{-1} W^{1/2} K and
/// (I+KW)^{-1} u as u - K R u with R = W^{1/2} B^{-1} W^{1/2}; K is never
/// inverted directly.
inline HyperGradients grad_hyper(const FittedModel& model) {
  if (!model.converged) throw InputError("grad_hyper: model is not at a converged mode");
  const FidelityDataset& data = model.data;
  const Index nl = data.n_low(), nh = data.n_high();
  const Index nx = nl + nh, n = nl + 2 * nh;
  const double rho = model.hyper.rho;
  const Matrix& K = model.prior.K;

  const WSqrt s = WSqrt::from(model.w_at_mode);
  Matrix b_mat = s.sandwich(K);
  b_mat.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(b_mat);
  if (llt.info() != Eigen::Success) throw NumericalError("grad_hyper: factorization of B failed");
  const Matrix b_inv = llt.solve(Matrix::Identity(n, n));
  const Matrix r = s.sandwich(b_inv);      // (K + W^{-1})^{-1}
  const Matrix m = K - K * r * K;          // (K^{-1} + W)^{-1}

  const Vector g = grad_log_likelihood(model.xi_hat, data, rho);
  const Vector tdc = third_derivative_contraction(m, model.xi_hat, data, rho);
  const Vector& alpha = model.alpha;

  HyperGradients out;

  // --- rho ------------------------------------------------------------------
  if (nh > 0) {
    const ExplicitRhoTerms ert = explicit_rho_terms(model.xi_hat, data, rho);
    const Vector dxi = m * ert.d_grad_lambda_d_rho;  // (I + K W)^{-1} K t = M t

    // sum(M .* dW/drho_explicit): only the 2x2-of-diagonals high-fidelity block
    double trace_exp = 0.0;
    for (Index t = 0; t < nh; ++t) {
      const Index mm = nl + t, dd = nl + nh + t;
      const double dD = ert.d_d_d_rho[t];
      const double D = model.w_at_mode.D[t];
      trace_exp += (rho * rho * dD + 2.0 * rho * D) * m(mm, mm) +
                   2.0 * (rho * dD + D) * m(mm, dd) + dD * m(dd, dd);
    }
    const double d_lambda = ert.d_lambda_d_rho + g.dot(dxi);
    const double d_log_det = trace_exp + tdc.dot(dxi);
    out.d_rho = -alpha.dot(dxi) + d_lambda - 0.5 * d_log_det;
  }

  // --- kernel parameters ------------------------------------------------------
  // Explicit part mirrors the single-fidelity formulas: for each theta,
  //   dL = alpha' dK alpha / 2 - sum(R .* dK) / 2 - tdc' dxi_dtheta / 2,
  //   dxi_dtheta = (I + K W)^{-1} dK grad_lambda.
  auto theta_grad = [&](const Matrix& dk_block, Index offset, Index nb) {
    const auto alpha_b = alpha.segment(offset, nb);
    const double quad = alpha_b.dot(dk_block * alpha_b);
    const double tr = r.block(offset, offset, nb, nb).cwiseProduct(dk_block).sum();
    Vector u = Vector::Zero(n);
    u.segment(offset, nb) = dk_block * g.segment(offset, nb);
    const Vector dxi = u - K * (r * u);
    return 0.5 * quad - 0.5 * tr - 0.5 * tdc.dot(dxi);
  };

  if (nx > 0) {
    Matrix X(nx, data.dim());
    if (nl > 0) X.topRows(nl) = data.X_low;
    if (nh > 0) X.bottomRows(nh) = data.X_high;
    auto [dk_ds, dk_dsigma] = kernel_param_gradients(model.hyper.theta_l, X);
    out.d_s_l = theta_grad(dk_ds, 0, nx);
    out.d_sigma_l = theta_grad(dk_dsigma, 0, nx);
  }
  if (nh > 0) {
    auto [dk_ds, dk_dsigma] = kernel_param_gradients(model.hyper.theta_d, data.X_high);
    out.d_s_d = theta_grad(dk_ds, nx, nh);
    out.d_sigma_d = theta_grad(dk_dsigma, nx, nh);
  }
  return out;
}

struct PredictionScore {
  double latent_mean = 0.0;
  double probability = 0.5;
  int label = 0;
};

namespace detail {

/// Co-kriging cross-covariance of f_H(x*) with [f_L(X_L); f_H(X_H)] and the
/// 2x2-block train covariance K~ of [f_L(X_L); f_H(X_H)].
inline Matrix predictive_train_cov(const FidelityDataset& data, const Hyperparams& hyper) {
  const Index nl = data.n_low(), nh = data.n_high();
  Matrix kt(nl + nh, nl + nh);
  if (nl > 0) kt.topLeftCorner(nl, nl) = kernel_matrix(hyper.theta_l, data.X_low);
  if (nl > 0 && nh > 0) {
    const Matrix cross = hyper.rho * kernel_matrix(hyper.theta_l, data.X_low, data.X_high);
    kt.topRightCorner(nl, nh) = cross;
    kt.bottomLeftCorner(nh, nl) = cross.transpose();
  }
  if (nh > 0)
    kt.bottomRightCorner(nh, nh) = hyper.rho * hyper.rho * kernel_matrix(hyper.theta_l, data.X_high) +
                                   kernel_matrix(hyper.theta_d, data.X_high);
  return kt;
}

inline Matrix predictive_cross_cov(const FidelityDataset& data, const Hyperparams& hyper,
                                   const Matrix& x_star) {
  const Index nl = data.n_low(), nh = data.n_high();
  Matrix kx(x_star.rows(), nl + nh);
  if (nl > 0) kx.leftCols(nl) = hyper.rho * kernel_matrix(hyper.theta_l, x_star, data.X_low);
  if (nh > 0)
    kx.rightCols(nh) = hyper.rho * hyper.rho * kernel_matrix(hyper.theta_l, x_star, data.X_high) +
                       kernel_matrix(hyper.theta_d, x_star, data.X_high);
  return kx;
}

inline Vector predictive_targets(const FittedModel& model) {
  const Index nl = model.data.n_low(), nh = model.data.n_high();
  Vector fhat(nl + nh);
  fhat.head(nl) = model.xi_hat.f_low();
  fhat.tail(nh) = model.xi_hat.f_high(model.hyper.rho);
  return fhat;
}

}  // namespace detail

/// MAP prediction: latent mean k~*' K~^{-1} f^, probability sigma(mean),
/// label by the sign of the mean.
inline std::vector<PredictionScore> predict(const FittedModel& model, const Matrix& x_star) {
  if (x_star.cols() != model.data.dim())
    throw InputError("predict: test dimensionality does not match training data");
  const Index nt = model.data.n_low() + model.data.n_high();
  Vector weights;
  if (nt > 0) {
    Matrix kt = detail::predictive_train_cov(model.data, model.hyper);
    auto [chol, jitter] = detail::jittered_cholesky(std::move(kt), model.config.jitter_rel,
                                                    model.config.jitter_max_rel, "predict");
    const Vector fhat = detail::predictive_targets(model);
    weights = chol.triangularView<Eigen::Lower>().solve(fhat);
    chol.triangularView<Eigen::Lower>().transpose().solveInPlace(weights);
  }

  std::vector<PredictionScore> out(static_cast<std::size_t>(x_star.rows()));
  const Matrix kx = nt > 0 ? detail::predictive_cross_cov(model.data, model.hyper, x_star)
                           : Matrix(x_star.rows(), 0);
  for (Index i = 0; i < x_star.rows(); ++i) {
    const double mean = nt > 0 ? kx.row(i).dot(weights) : 0.0;
    out[static_cast<std::size_t>(i)] =
        PredictionScore{mean, sigmoid(mean), mean > 0.0 ? 1 : 0};
  }
  return out;
}

}  // namespace mfgpc
