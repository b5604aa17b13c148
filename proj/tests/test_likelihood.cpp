#include <doctest.h>

#include <mfgpc/likelihood.hpp>
#include <mfgpc/oracles.hpp>

#include "support.hpp"

using namespace mfgpc;
using testsupport::random_instance;
using testsupport::rel_err;

TEST_CASE("sigmoid family at the symmetry point and saturation") {
  auto [s0, w0, z0] = sigmoid_family(0.0);
  CHECK(s0 == 0.5);
  CHECK(w0 == 0.25);
  CHECK(z0 == 0.0);

  auto [s, w, z] = sigmoid_family(500.0);
  CHECK(s == 1.0);
  CHECK(w == 0.0);
  CHECK(z == 0.0);
  auto neg = sigmoid_family(-500.0);
  CHECK(neg.sigma == doctest::Approx(0.0));
  CHECK(std::isfinite(log_sigmoid(-700.0)));
}

TEST_CASE("sigmoid family at z=1 against direct scalar evaluation") {
  const double s = 1.0 / (1.0 + std::exp(-1.0));
  auto f = sigmoid_family(1.0);
  CHECK(f.sigma == doctest::Approx(0.731059).epsilon(1e-5));
  CHECK(f.omega == doctest::Approx(0.196612).epsilon(1e-5));
  CHECK(f.zeta == doctest::Approx(-0.090858).epsilon(1e-4));
  CHECK(f.omega == doctest::Approx(s * (1 - s)).epsilon(1e-15));
}

TEST_CASE("log_likelihood at xi=0 and label-flip antisymmetry") {
  auto inst = random_instance(21, 6, 4, 2, 0.8);
  const LatentVector zero = LatentVector::zeros(inst.data);
  CHECK(log_likelihood(zero, inst.data, 0.8) ==
        doctest::Approx((inst.data.n_low() + inst.data.n_high()) * std::log(0.5)).epsilon(1e-13));

  // lambda(xi; y) == lambda(-xi; 1-y) exactly
  FidelityDataset flipped = inst.data;
  for (Index i = 0; i < flipped.y_low.size(); ++i) flipped.y_low[i] = 1 - flipped.y_low[i];
  for (Index i = 0; i < flipped.y_high.size(); ++i) flipped.y_high[i] = 1 - flipped.y_high[i];
  LatentVector neg = inst.xi;
  neg.values = -neg.values;
  CHECK(log_likelihood(inst.xi, inst.data, 0.8) == log_likelihood(neg, flipped, 0.8));
  CHECK(log_likelihood(inst.xi, inst.data, 0.8) <= 0.0);
}

TEST_CASE("log_likelihood matches a naive per-point loop") {
  auto inst = random_instance(22, 5, 3, 2, -1.3);
  double naive = 0.0;
  for (Index i = 0; i < inst.data.n_low(); ++i)
    naive += std::log(sigmoid((2.0 * inst.data.y_low[i] - 1.0) * inst.xi.values[i]));
  for (Index i = 0; i < inst.data.n_high(); ++i) {
    const double fh = -1.3 * inst.xi.values[5 + i] + inst.xi.values[8 + i];
    naive += std::log(sigmoid((2.0 * inst.data.y_high[i] - 1.0) * fh));
  }
  CHECK(log_likelihood(inst.xi, inst.data, -1.3) == doctest::Approx(naive).epsilon(1e-12));
}

TEST_CASE("grad_log_likelihood blocks at xi=0 with all-one labels") {
  auto inst = random_instance(23, 4, 3, 2, 0.7);
  inst.data.y_low.setConstant(1);
  inst.data.y_high.setConstant(1);
  const LatentVector zero = LatentVector::zeros(inst.data);
  const Vector g = grad_log_likelihood(zero, inst.data, 0.7);
  for (Index i = 0; i < 4; ++i) CHECK(g[i] == 0.5);
  for (Index i = 0; i < 3; ++i) {
    CHECK(g[4 + i] == doctest::Approx(0.5 * 0.7).epsilon(1e-15));
    CHECK(g[4 + 3 + i] == 0.5);
  }
}

TEST_CASE("grad_log_likelihood: rho=0 zeroes the middle block") {
  auto inst = random_instance(24, 4, 3, 2, 0.0);
  const Vector g = grad_log_likelihood(inst.xi, inst.data, 0.0);
  for (Index i = 0; i < 3; ++i) CHECK(g[4 + i] == 0.0);
}

TEST_CASE("grad_log_likelihood matches finite differences") {
  for (std::uint64_t seed : {31, 32, 33}) {
    auto inst = random_instance(seed, 7, 4, 3, seed == 32 ? -0.9 : 1.4);
    const double rho = inst.hyper.rho = seed == 32 ? -0.9 : 1.4;
    const Vector g = grad_log_likelihood(inst.xi, inst.data, rho);
    const Vector fd = finite_diff_gradient(
        [&](const Vector& v) { return log_likelihood(LatentVector::wrap(v, inst.data), inst.data, rho); },
        inst.xi.values, 1e-5);
    CHECK(rel_err(g, fd) < 1e-6);
  }
}

TEST_CASE("curvature entries at xi=0 are 0.25 and lie in (0, 0.25]") {
  auto inst = random_instance(41, 5, 4, 2, 1.1);
  const CurvatureW w0 = curvature(LatentVector::zeros(inst.data), inst.data, 1.1);
  CHECK((w0.A.array() == 0.25).all());
  CHECK((w0.D.array() == 0.25).all());
  const CurvatureW w = curvature(inst.xi, inst.data, 1.1);
  CHECK((w.A.array() > 0.0).all());
  CHECK((w.A.array() <= 0.25).all());
  CHECK((w.D.array() > 0.0).all());
  CHECK((w.D.array() <= 0.25).all());
}

TEST_CASE("dense W equals the negative Hessian of log_likelihood") {
  auto inst = random_instance(42, 5, 3, 2, -0.7);
  const double rho = -0.7;
  const Matrix w = curvature(inst.xi, inst.data, rho).dense();
  const Index n = inst.xi.size();
  // second differences of lambda
  const double h = 1e-4;
  Matrix hess(n, n);
  for (Index i = 0; i < n; ++i) {
    Vector e = Vector::Zero(n);
    e[i] = h;
    const Vector gp = grad_log_likelihood(LatentVector::wrap(inst.xi.values + e, inst.data), inst.data, rho);
    const Vector gm = grad_log_likelihood(LatentVector::wrap(inst.xi.values - e, inst.data), inst.data, rho);
    hess.col(i) = (gp - gm) / (2.0 * h);
  }
  CHECK((w + hess).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("curvature at rho=0 is block-diagonal with zero middle block") {
  auto inst = random_instance(43, 4, 3, 2, 0.0);
  const Matrix w = curvature(inst.xi, inst.data, 0.0).dense();
  CHECK(w.block(4, 4, 3, 3).cwiseAbs().maxCoeff() == 0.0);
  CHECK(w.block(4, 7, 3, 3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("w_sqrt squared reproduces dense W") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    Rng rng(seed + 100);
    const double rho = rng.uniform(-3.0, 3.0);
    auto inst = random_instance(seed, 8, 6, 2, rho, 2.0);
    const CurvatureW w = curvature(inst.xi, inst.data, rho);
    const Matrix s = w_sqrt(w);
    CHECK(((s * s) - w.dense()).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("w_sqrt special cases: rho=0 and rho=1 with unit D") {
  auto inst = random_instance(51, 2, 2, 2, 0.0);
  CurvatureW w = curvature(inst.xi, inst.data, 0.0);
  Matrix s = w_sqrt(w);
  CHECK(s.block(2, 2, 2, 2).cwiseAbs().maxCoeff() == 0.0);  // middle block zero
  for (Index i = 0; i < 2; ++i) {
    CHECK(s(i, i) == doctest::Approx(std::sqrt(w.A[i])));
    CHECK(s(4 + i, 4 + i) == doctest::Approx(std::sqrt(w.D[i])));
  }

  // rho=1, D=I: lower block is [[1,1],[1,1]] (x) I / sqrt(2)
  w.rho = 1.0;
  w.D.setConstant(1.0);
  s = w_sqrt(w);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (Index t = 0; t < 2; ++t) {
    CHECK(s(2 + t, 2 + t) == doctest::Approx(inv_sqrt2));
    CHECK(s(2 + t, 4 + t) == doctest::Approx(inv_sqrt2));
    CHECK(s(4 + t, 4 + t) == doctest::Approx(inv_sqrt2));
  }
}

TEST_CASE("dense W is PSD across random instances") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 900);
    const double rho = rng.uniform(-3.0, 3.0);
    auto inst = random_instance(seed + 60, 10, 5, 3, rho, 2.5);
    const Matrix w = curvature(inst.xi, inst.data, rho).dense();
    Eigen::SelfAdjointEigenSolver<Matrix> es(w);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("explicit rho terms: zero f_L(X_H) kills the explicit parts") {
  auto inst = random_instance(71, 3, 4, 2, 1.2);
  inst.xi.values.segment(3, 4).setZero();  // f_L at X_H
  const auto ert = explicit_rho_terms(inst.xi, inst.data, 1.2);
  CHECK(ert.d_lambda_d_rho == 0.0);
  for (Index i = 0; i < 4; ++i) CHECK(ert.d_grad_lambda_d_rho[3 + 4 + i] == 0.0);
}

TEST_CASE("explicit rho terms: single high-fidelity point at xi=0, rho=0, y=1") {
  FidelityDataset data;
  data.X_low.resize(0, 2);
  data.y_low.resize(0);
  data.X_high = Matrix::Zero(1, 2);
  data.y_high = IntVector::Ones(1);
  const LatentVector xi = LatentVector::zeros(data);
  const auto ert = explicit_rho_terms(xi, data, 0.0);
  CHECK(ert.d_grad_lambda_d_rho[0] == 0.5);  // f_L(X_H) coordinate
  CHECK(ert.d_grad_lambda_d_rho[1] == 0.0);  // delta coordinate
}

TEST_CASE("explicit rho terms match finite differences in rho with xi fixed") {
  for (std::uint64_t seed : {81, 82, 83}) {
    Rng rng(seed);
    const double rho = rng.uniform(-2.0, 2.0);
    auto inst = random_instance(seed, 6, 5, 2, rho);
    const auto ert = explicit_rho_terms(inst.xi, inst.data, rho);
    const double h = 1e-6;

    const Vector fd_grad = (grad_log_likelihood(inst.xi, inst.data, rho + h) -
                            grad_log_likelihood(inst.xi, inst.data, rho - h)) /
                           (2.0 * h);
    CHECK(rel_err(ert.d_grad_lambda_d_rho, fd_grad) < 1e-5);

    const double fd_lambda =
        (log_likelihood(inst.xi, inst.data, rho + h) - log_likelihood(inst.xi, inst.data, rho - h)) /
        (2.0 * h);
    CHECK(rel_err(ert.d_lambda_d_rho, fd_lambda) < 1e-5);

    const Matrix fd_w = (curvature(inst.xi, inst.data, rho + h).dense() -
                         curvature(inst.xi, inst.data, rho - h).dense()) /
                        (2.0 * h);
    const double scale = std::max(fd_w.cwiseAbs().maxCoeff(), 1e-12);
    CHECK((ert.d_w_d_rho - fd_w).cwiseAbs().maxCoeff() / scale < 1e-5);
  }
}

TEST_CASE("third derivative contraction: zero at xi=0 and rho=0 middle block") {
  auto inst = random_instance(91, 5, 3, 2, 0.9);
  const Index n = inst.xi.size();
  Rng rng(5);
  Matrix m(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j <= i; ++j) m(i, j) = m(j, i) = rng.normal();

  const Vector at_zero = third_derivative_contraction(m, LatentVector::zeros(inst.data), inst.data, 0.9);
  CHECK(at_zero.cwiseAbs().maxCoeff() == 0.0);  // zeta(0) = 0

  const Vector at_rho0 = third_derivative_contraction(m, inst.xi, inst.data, 0.0);
  for (Index i = 0; i < 3; ++i) CHECK(at_rho0[5 + i] == 0.0);
}

TEST_CASE("third derivative contraction matches the dense Hadamard oracle") {
  for (std::uint64_t seed : {95, 96, 97}) {
    Rng rng(seed);
    const double rho = rng.uniform(-2.0, 2.0);
    auto inst = random_instance(seed, 6, 4, 2, rho);
    const Index n = inst.xi.size();
    Matrix m(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j <= i; ++j) m(i, j) = m(j, i) = rng.normal();
    const Vector fast = third_derivative_contraction(m, inst.xi, inst.data, rho);
    for (Index i = 0; i < n; ++i) {
      const double dense = m.cwiseProduct(dense_curvature_derivative(inst.xi, inst.data, rho, i)).sum();
      CHECK(std::abs(fast[i] - dense) < 1e-10);
    }
  }
}

TEST_CASE("latent vector block accessors and validation") {
  FidelityDataset data;
  data.X_low = Matrix::Zero(2, 1);
  data.y_low = IntVector::Zero(2);
  data.X_high = Matrix::Zero(3, 1);
  data.y_high = IntVector::Zero(3);
  CHECK_THROWS_AS(LatentVector::wrap(Vector::Zero(7), data), InputError);  // needs 2 + 6
  const LatentVector xi = LatentVector::wrap(Vector::LinSpaced(8, 0, 7), data);
  CHECK(xi.f_low()[1] == 1.0);
  CHECK(xi.f_low_at_high()[0] == 2.0);
  CHECK(xi.delta()[2] == 7.0);
}
