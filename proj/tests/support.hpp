#pragma once

#include <mfgpc/dataset.hpp>
#include <mfgpc/laplace.hpp>
#include <mfgpc/likelihood.hpp>
#include <mfgpc/rng.hpp>

namespace testsupport {

using namespace mfgpc;

struct Instance {
  FidelityDataset data;
  Hyperparams hyper;
  LatentVector xi;
};

inline Matrix random_points(Rng& rng, Index n, Index d) {
  Matrix x(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) x(i, j) = rng.uniform();
  return x;
}

inline IntVector random_labels(Rng& rng, Index n, bool ensure_both = false) {
  IntVector y(n);
  for (Index i = 0; i < n; ++i) y[i] = rng.uniform() < 0.5 ? 1 : 0;
  if (ensure_both && n >= 2) {
    y[0] = 0;
    y[1] = 1;
  }
  return y;
}

/// Random dataset + hyperparameters + latent point for derivative checks.
inline Instance random_instance(std::uint64_t seed, Index n_low, Index n_high, Index dim, double rho,
                                double xi_scale = 1.5, bool balanced = false) {
  Rng rng(seed);
  Instance inst;
  inst.data.X_low = random_points(rng, n_low, dim);
  inst.data.y_low = random_labels(rng, n_low, balanced);
  inst.data.X_high = random_points(rng, n_high, dim);
  inst.data.y_high = random_labels(rng, n_high, balanced);
  inst.hyper.rho = rho;
  inst.hyper.theta_l = RbfParams(rng.uniform(-0.5, 0.8), rng.uniform(0.3, 1.2));
  inst.hyper.theta_d = RbfParams(rng.uniform(-0.5, 0.8), rng.uniform(0.3, 1.2));
  inst.xi = LatentVector::zeros(inst.data);
  for (Index i = 0; i < inst.xi.values.size(); ++i) inst.xi.values[i] = xi_scale * rng.normal();
  return inst;
}

inline double rel_err(const Vector& got, const Vector& want) {
  const double scale = std::max(want.cwiseAbs().maxCoeff(), 1e-12);
  return (got - want).cwiseAbs().maxCoeff() / scale;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-12);
}

}  // namespace testsupport
