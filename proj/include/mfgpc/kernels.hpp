#pragma once

#include <cmath>
#include <utility>

#include "mfgpc/common.hpp"

namespace mfgpc {

/// Isotropic RBF kernel parameters: k(x, x') = exp(s) exp(-|x-x'|^2 / (2 sigma^2)).
/// sigma is kept as log(sigma) internally so optimizers can move it freely.
class RbfParams {
 public:
  RbfParams() : s_(0.0), log_sigma_(0.0) {}
  RbfParams(double s, double sigma) : s_(s) {
    if (!(sigma > 0.0)) throw InputError("RbfParams: sigma must be positive");
    log_sigma_ = std::log(sigma);
  }
  static RbfParams from_log(double s, double log_sigma) {
    RbfParams p;
    p.s_ = s;
    p.log_sigma_ = log_sigma;
    return p;
  }

  double s() const { return s_; }
  double sigma() const { return std::exp(log_sigma_); }
  double log_sigma() const { return log_sigma_; }
  double amplitude() const { return std::exp(s_); }

 private:
  double s_;
  double log_sigma_;
};

/// Pairwise squared distances via the expanded-square formula.
/// Negative values from cancellation are clamped to zero.
inline Matrix squared_distances(const Matrix& Xa, const Matrix& Xb) {
  if (Xa.cols() != Xb.cols())
    throw InputError("squared_distances: feature dimensionality mismatch");
  const Vector na = Xa.rowwise().squaredNorm();
  const Vector nb = Xb.rowwise().squaredNorm();
  Matrix d2 = -2.0 * (Xa * Xb.transpose());
  d2.colwise() += na;
  d2.rowwise() += nb.transpose();
  return d2.cwiseMax(0.0);
}

inline Matrix kernel_matrix(const RbfParams& p, const Matrix& Xa, const Matrix& Xb) {
  const double sigma = p.sigma();
  Matrix k = squared_distances(Xa, Xb);
  k *= -0.5 / (sigma * sigma);
  k = k.array().exp().matrix() * p.amplitude();
  return k;
}

/// Square Gram; the distance matrix is mirrored so symmetry is exact.
inline Matrix kernel_matrix(const RbfParams& p, const Matrix& X) {
  const double sigma = p.sigma();
  Matrix d2 = squared_distances(X, X);
  d2 = 0.5 * (d2 + d2.transpose()).eval();
  d2 *= -0.5 / (sigma * sigma);
  return d2.array().exp().matrix() * p.amplitude();
}

/// Analytic dK/ds and dK/dsigma for the square Gram K(X, X).
/// dK/ds = K;  dK/dsigma = K .* d2 / sigma^3.
inline std::pair<Matrix, Matrix> kernel_param_gradients(const RbfParams& p, const Matrix& X) {
  const double sigma = p.sigma();
  Matrix d2 = squared_distances(X, X);
  d2 = 0.5 * (d2 + d2.transpose()).eval();
  Matrix k = (d2 * (-0.5 / (sigma * sigma))).array().exp().matrix() * p.amplitude();
  Matrix dk_dsigma = k.cwiseProduct(d2) / (sigma * sigma * sigma);
  return {std::move(k), std::move(dk_dsigma)};
}

}  // namespace mfgpc
