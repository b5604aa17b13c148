#pragma once

#include <cmath>
#include <tuple>

#include "mfgpc/common.hpp"
#include "mfgpc/dataset.hpp"

namespace mfgpc {

/// sigma(z), omega(z) = sigma'(z), zeta(z) = sigma''(z), computed branchwise
/// so large |z| neither overflows nor loses the tail.
struct SigmoidFamily {
  double sigma;
  double omega;
  double zeta;
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline SigmoidFamily sigmoid_family(double z) {
  const double s = sigmoid(z);
  const double w = s * (1.0 - s);
  return {s, w, w * (1.0 - 2.0 * s)};
}

/// log sigma(z) without overflow for |z| up to ~700.
inline double log_sigmoid(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

/// Latent vector xi = [f_L(X_L); f_L(X_H); delta(X_H)] with fixed block layout.
struct LatentVector {
  Vector values;
  Index n_low = 0;
  Index n_high = 0;

  static LatentVector zeros(const FidelityDataset& data) {
    LatentVector xi;
    xi.n_low = data.n_low();
    xi.n_high = data.n_high();
    xi.values = Vector::Zero(xi.size());
    return xi;
  }
  static LatentVector wrap(Vector v, const FidelityDataset& data) {
    LatentVector xi;
    xi.n_low = data.n_low();
    xi.n_high = data.n_high();
    if (v.size() != xi.size()) throw InputError("LatentVector: size must be n_low + 2*n_high");
    xi.values = std::move(v);
    return xi;
  }

  Index size() const { return n_low + 2 * n_high; }

  auto f_low() const { return values.segment(0, n_low); }
  auto f_low_at_high() const { return values.segment(n_low, n_high); }
  auto delta() const { return values.segment(n_low + n_high, n_high); }

  /// High-fidelity latent rho * f_L(X_H) + delta(X_H).
  Vector f_high(double rho) const { return rho * f_low_at_high() + delta(); }

  void check_matches(const FidelityDataset& data) const {
    if (n_low != data.n_low() || n_high != data.n_high())
      throw InputError("LatentVector: block layout does not match dataset");
  }
};

/// Negative Hessian W of the log-likelihood in compact form: diagonal block A
/// over X_L and the [[rho^2, rho], [rho, 1]] (x) D structure over X_H.
struct CurvatureW {
  Vector A;  // length n_low, entries omega(f_L(x_i^L))
  Vector D;  // length n_high, entries omega(f_H_i)
  double rho = 0.0;

  Index size() const { return A.size() + 2 * D.size(); }

  Matrix dense() const {
    const Index nl = A.size(), nh = D.size(), n = size();
    Matrix w = Matrix::Zero(n, n);
    w.diagonal().head(nl) = A;
    for (Index t = 0; t < nh; ++t) {
      const Index m = nl + t, d = nl + nh + t;
      w(m, m) = rho * rho * D[t];
      w(m, d) = rho * D[t];
      w(d, m) = rho * D[t];
      w(d, d) = D[t];
    }
    return w;
  }

  /// W * v exploiting the block structure; O(n).
  Vector apply(const Vector& v) const {
    const Index nl = A.size(), nh = D.size();
    Vector out(size());
    out.head(nl) = A.cwiseProduct(v.head(nl));
    for (Index t = 0; t < nh; ++t) {
      const double vm = v[nl + t], vd = v[nl + nh + t];
      out[nl + t] = D[t] * (rho * rho * vm + rho * vd);
      out[nl + nh + t] = D[t] * (rho * vm + vd);
    }
    return out;
  }
};

/// Exact symmetric square root of W:
///   blockdiag(A^{1/2}, (rho^2+1)^{-1/2} [[rho^2, rho], [rho, 1]] (x) D^{1/2}).
/// Row/column i touches at most two entries, which the *_mul helpers exploit.
struct WSqrt {
  Vector a_sqrt;  // sqrt(A)
  Vector c;       // sqrt(D) / sqrt(rho^2 + 1)
  double rho = 0.0;

  static WSqrt from(const CurvatureW& w) {
    WSqrt s;
    s.rho = w.rho;
    s.a_sqrt = w.A.cwiseSqrt();
    s.c = w.D.cwiseSqrt() / std::sqrt(w.rho * w.rho + 1.0);
    return s;
  }

  Index size() const { return a_sqrt.size() + 2 * c.size(); }

  Matrix dense() const {
    const Index nl = a_sqrt.size(), nh = c.size(), n = size();
    Matrix m = Matrix::Zero(n, n);
    m.diagonal().head(nl) = a_sqrt;
    for (Index t = 0; t < nh; ++t) {
      const Index mm = nl + t, dd = nl + nh + t;
      m(mm, mm) = rho * rho * c[t];
      m(mm, dd) = rho * c[t];
      m(dd, mm) = rho * c[t];
      m(dd, dd) = c[t];
    }
    return m;
  }

  Vector apply(const Vector& v) const {
    const Index nl = a_sqrt.size(), nh = c.size();
    Vector out(size());
    out.head(nl) = a_sqrt.cwiseProduct(v.head(nl));
    for (Index t = 0; t < nh; ++t) {
      const double vm = v[nl + t], vd = v[nl + nh + t];
      out[nl + t] = c[t] * (rho * rho * vm + rho * vd);
      out[nl + nh + t] = c[t] * (rho * vm + vd);
    }
    return out;
  }

  /// W^{1/2} * M, O(n^2).
  Matrix left_mul(const Matrix& m) const {
    const Index nl = a_sqrt.size(), nh = c.size();
    Matrix out(size(), m.cols());
    out.topRows(nl) = a_sqrt.asDiagonal() * m.topRows(nl);
    for (Index t = 0; t < nh; ++t) {
      out.row(nl + t) = c[t] * (rho * rho * m.row(nl + t) + rho * m.row(nl + nh + t));
      out.row(nl + nh + t) = c[t] * (rho * m.row(nl + t) + m.row(nl + nh + t));
    }
    return out;
  }

  /// M * W^{1/2}, O(n^2).
  Matrix right_mul(const Matrix& m) const {
    const Index nl = a_sqrt.size(), nh = c.size();
    Matrix out(m.rows(), size());
    out.leftCols(nl) = m.leftCols(nl) * a_sqrt.asDiagonal();
    for (Index t = 0; t < nh; ++t) {
      out.col(nl + t) = c[t] * (rho * rho * m.col(nl + t) + rho * m.col(nl + nh + t));
      out.col(nl + nh + t) = c[t] * (rho * m.col(nl + t) + m.col(nl + nh + t));
    }
    return out;
  }

  /// W^{1/2} * M * W^{1/2}.
  Matrix sandwich(const Matrix& m) const { return left_mul(right_mul(m)); }
};

/// Dense W^{1/2} per the closed-form block expression.
inline Matrix w_sqrt(const CurvatureW& w) { return WSqrt::from(w).dense(); }

// --- likelihood value and derivatives ---------------------------------------

/// lambda(xi) = sum_i log sigma(yt_i^L f_i^L) + sum_i log sigma(yt_i^H f_i^H).
inline double log_likelihood(const LatentVector& xi, const FidelityDataset& data, double rho) {
  xi.check_matches(data);
  double lambda = 0.0;
  const auto fl = xi.f_low();
  for (Index i = 0; i < data.n_low(); ++i) {
    const double yt = 2.0 * data.y_low[i] - 1.0;
    lambda += log_sigmoid(yt * fl[i]);
  }
  const Vector fh = xi.f_high(rho);
  for (Index i = 0; i < data.n_high(); ++i) {
    const double yt = 2.0 * data.y_high[i] - 1.0;
    lambda += log_sigmoid(yt * fh[i]);
  }
  return lambda;
}

/// Gradient of lambda w.r.t. xi, blockwise:
///   [y^L - sigma(f^L); rho (y^H - sigma(f^H)); y^H - sigma(f^H)].
inline Vector grad_log_likelihood(const LatentVector& xi, const FidelityDataset& data, double rho) {
  xi.check_matches(data);
  const Index nl = data.n_low(), nh = data.n_high();
  Vector g(xi.size());
  const auto fl = xi.f_low();
  for (Index i = 0; i < nl; ++i) g[i] = data.y_low[i] - sigmoid(fl[i]);
  const Vector fh = xi.f_high(rho);
  for (Index i = 0; i < nh; ++i) {
    const double r = data.y_high[i] - sigmoid(fh[i]);
    g[nl + i] = rho * r;
    g[nl + nh + i] = r;
  }
  return g;
}

inline CurvatureW curvature(const LatentVector& xi, const FidelityDataset& data, double rho) {
  xi.check_matches(data);
  CurvatureW w;
  w.rho = rho;
  w.A.resize(data.n_low());
  const auto fl = xi.f_low();
  for (Index i = 0; i < data.n_low(); ++i) w.A[i] = sigmoid_family(fl[i]).omega;
  w.D.resize(data.n_high());
  const Vector fh = xi.f_high(rho);
  for (Index i = 0; i < data.n_high(); ++i) w.D[i] = sigmoid_family(fh[i]).omega;
  return w;
}

/// Everything that differentiates explicitly in rho with xi held fixed.
struct ExplicitRhoTerms {
  Vector d_grad_lambda_d_rho;    // length of xi
  double d_lambda_d_rho = 0.0;   // explicit part of d(lambda)/d(rho)
  Matrix d_w_d_rho;              // dense explicit part of dW/drho
  Vector d_d_d_rho;              // diag of dD/drho|explicit = f_L(X_H) zeta(f_H)
};

inline ExplicitRhoTerms explicit_rho_terms(const LatentVector& xi, const FidelityDataset& data,
                                           double rho) {
  xi.check_matches(data);
  const Index nl = data.n_low(), nh = data.n_high(), n = xi.size();
  ExplicitRhoTerms out;
  out.d_grad_lambda_d_rho = Vector::Zero(n);
  out.d_w_d_rho = Matrix::Zero(n, n);
  out.d_d_d_rho = Vector::Zero(nh);

  const auto flh = xi.f_low_at_high();
  const Vector fh = xi.f_high(rho);
  for (Index i = 0; i < nh; ++i) {
    const auto sf = sigmoid_family(fh[i]);
    const double yt = 2.0 * data.y_high[i] - 1.0;
    const double resid = data.y_high[i] - sf.sigma;
    out.d_grad_lambda_d_rho[nl + i] = resid - rho * flh[i] * sf.omega;
    out.d_grad_lambda_d_rho[nl + nh + i] = -flh[i] * sf.omega;
    out.d_lambda_d_rho += yt * flh[i] * (1.0 - sigmoid(yt * fh[i]));
    out.d_d_d_rho[i] = flh[i] * sf.zeta;

    const double D = sf.omega;
    const Index m = nl + i, d = nl + nh + i;
    const double dd = out.d_d_d_rho[i];
    out.d_w_d_rho(m, m) = rho * rho * dd + 2.0 * rho * D;
    out.d_w_d_rho(m, d) = rho * dd + D;
    out.d_w_d_rho(d, m) = rho * dd + D;
    out.d_w_d_rho(d, d) = dd;
  }
  return out;
}

/// Component i of the vector whose entries are sum(M .* dW/dxi_i), using the
/// closed forms that keep the whole thing O(n) given M's diagonal stripes.
/// M must be (K^{-1} + W)^{-1} (or any symmetric matrix of matching size).
inline Vector third_derivative_contraction(const Matrix& M, const LatentVector& xi,
                                           const FidelityDataset& data, double rho) {
  xi.check_matches(data);
  const Index nl = data.n_low(), nh = data.n_high(), n = xi.size();
  if (M.rows() != n || M.cols() != n)
    throw InputError("third_derivative_contraction: M dimension mismatch");
  Vector out(n);
  const auto fl = xi.f_low();
  for (Index i = 0; i < nl; ++i) out[i] = M(i, i) * sigmoid_family(fl[i]).zeta;
  const Vector fh = xi.f_high(rho);
  for (Index t = 0; t < nh; ++t) {
    const double z = sigmoid_family(fh[t]).zeta;
    const Index m = nl + t, d = nl + nh + t;
    out[m] = (M(m, m) * rho * rho * rho + 2.0 * M(m, d) * rho * rho + M(d, d) * rho) * z;
    out[d] = (M(d, d) + 2.0 * M(d, m) * rho + M(m, m) * rho * rho) * z;
  }
  return out;
}

}  // namespace mfgpc
