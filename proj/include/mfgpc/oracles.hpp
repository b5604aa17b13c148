#pragma once

#include <Eigen/Eigenvalues>
#include <cmath>
#include <functional>

#include "mfgpc/common.hpp"
#include "mfgpc/laplace.hpp"
#include "mfgpc/likelihood.hpp"

namespace mfgpc {

/// Central finite differences, component-wise.
template <typename F>
Vector finite_diff_gradient(F&& f, const Vector& x, double step) {
  Vector g(x.size());
  Vector xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + step;
    const double up = f(xp);
    xp[i] = x[i] - step;
    const double dn = f(xp);
    xp[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(dn))
      throw NumericalError("finite_diff_gradient: non-finite evaluation at coordinate " + std::to_string(i));
    g[i] = (up - dn) / (2.0 * step);
  }
  return g;
}

/// Dense dW/dxi_i materialized from the definition. The sparse closed forms in
/// third_derivative_contraction are checked against this; it is oracle-only.
inline Matrix dense_curvature_derivative(const LatentVector& xi, const FidelityDataset& data, double rho,
                                         Index i) {
  const Index nl = data.n_low(), nh = data.n_high(), n = xi.size();
  Matrix dw = Matrix::Zero(n, n);
  if (i < nl) {
    dw(i, i) = sigmoid_family(xi.f_low()[i]).zeta;
    return dw;
  }
  const Index t = i < nl + nh ? i - nl : i - nl - nh;
  const double fh = rho * xi.f_low_at_high()[t] + xi.delta()[t];
  const double dz = sigmoid_family(fh).zeta * (i < nl + nh ? rho : 1.0);
  const Index m = nl + t, d = nl + nh + t;
  dw(m, m) = rho * rho * dz;
  dw(m, d) = rho * dz;
  dw(d, m) = rho * dz;
  dw(d, d) = dz;
  return dw;
}

// --- Gauss-Hermite quadrature ----------------------------------------------------

/// Nodes/weights for E[f(U)] with U ~ N(0,1), via the Golub-Welsch eigenvalue
/// construction on the probabilists'-Hermite Jacobi matrix.
inline std::pair<Vector, Vector> gauss_hermite(int n) {
  Matrix jacobi = Matrix::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double b = std::sqrt(static_cast<double>(i));
    jacobi(i, i - 1) = b;
    jacobi(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(jacobi);
  Vector nodes = es.eigenvalues();
  Vector weights(n);
  for (int i = 0; i < n; ++i) {
    const double v = es.eigenvectors()(0, i);
    weights[i] = v * v;
  }
  return {std::move(nodes), std::move(weights)};
}

/// Exact (to quadrature accuracy) log marginal likelihood
///   log \int p(y | xi) N(xi; 0, K) dxi
/// by tensorized Gauss-Hermite over xi = L u. Only viable for tiny latent
/// dimension; this is the oracle for the Laplace approximation on n_l=n_h=1.
inline double quadrature_log_marginal(const FidelityDataset& data, const Hyperparams& hyper,
                                      const Prior& prior, int nodes_per_dim = 64) {
  const Index n = data.n_low() + 2 * data.n_high();
  if (n > 4) throw InputError("quadrature_log_marginal: latent dimension too large for tensor quadrature");
  auto [nodes, weights] = gauss_hermite(nodes_per_dim);

  double total = 0.0;
  Vector u(n);
  std::function<void(Index, double)> recurse = [&](Index dim, double w_acc) {
    if (dim == n) {
      const Vector xi_vals = prior.chol_lower.triangularView<Eigen::Lower>() * u;
      const LatentVector xi = LatentVector::wrap(xi_vals, data);
      total += w_acc * std::exp(log_likelihood(xi, data, hyper.rho));
      return;
    }
    for (int k = 0; k < nodes_per_dim; ++k) {
      u[dim] = nodes[k];
      recurse(dim + 1, w_acc * weights[k]);
    }
  };
  recurse(0, 1.0);
  return std::log(total);
}

}  // namespace mfgpc
