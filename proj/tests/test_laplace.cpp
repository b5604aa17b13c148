#include <doctest.h>

#include <mfgpc/laplace.hpp>
#include <mfgpc/model_io.hpp>
#include <mfgpc/oracles.hpp>

#include "support.hpp"

using namespace mfgpc;
using testsupport::random_instance;
using testsupport::rel_err;

namespace {

FidelityDataset balanced_dataset(std::uint64_t seed, Index n_low, Index n_high, Index dim) {
  auto inst = random_instance(seed, n_low, n_high, dim, 1.0, 1.0, /*balanced=*/true);
  return inst.data;
}

Hyperparams default_hyper(double rho = 1.0) {
  Hyperparams h;
  h.rho = rho;
  h.theta_l = RbfParams(0.0, 0.5);
  h.theta_d = RbfParams(-0.5, 0.5);
  return h;
}

}  // namespace

TEST_CASE("build_prior block structure") {
  const FidelityDataset data = balanced_dataset(1, 4, 3, 2);
  const Hyperparams hyper = default_hyper();
  const Prior prior = build_prior(data, hyper);
  // no coupling between the k_l block and the k_d block
  CHECK(prior.K.topRightCorner(7, 3).cwiseAbs().maxCoeff() == 0.0);
  CHECK(prior.K.bottomLeftCorner(3, 7).cwiseAbs().maxCoeff() == 0.0);

  FidelityDataset low_only = data;
  low_only.X_high.resize(0, 2);
  low_only.y_high.resize(0);
  const Prior p2 = build_prior(low_only, hyper);
  const Matrix expect = kernel_matrix(hyper.theta_l, data.X_low);
  CHECK((p2.K - expect).cwiseAbs().maxCoeff() == doctest::Approx(p2.jitter).epsilon(1e-10));
}

TEST_CASE("build_prior factorizes 40 random points in 5D with default jitter") {
  const FidelityDataset data = balanced_dataset(2, 25, 15, 5);
  const Prior prior = build_prior(data, default_hyper());
  CHECK(prior.chol_lower.rows() == 25 + 2 * 15);
  CHECK((prior.K - prior.K.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fit_mode: single low-fidelity point solves sigma(f) - 1 + f = 0") {
  FidelityDataset data;
  data.X_low = Matrix::Zero(1, 1);
  data.y_low = IntVector::Ones(1);
  data.X_high.resize(0, 1);
  data.y_high.resize(0);
  Hyperparams hyper = default_hyper();
  hyper.theta_l = RbfParams(0.0, 1.0);  // k(x,x) = 1
  FitConfig config;
  config.tol = 1e-10;
  const FittedModel model = fit_mode(data, hyper, config);

  // bisection oracle on (1 - sigma(f)) = f
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    ((1.0 - sigmoid(mid)) - mid > 0.0 ? lo : hi) = mid;
  }
  CHECK(model.xi_hat.values[0] == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-6));
  CHECK(0.5 * (lo + hi) == doctest::Approx(0.40106).epsilon(1e-4));
}

TEST_CASE("fit_mode: label flip negates the mode") {
  const FidelityDataset data = balanced_dataset(5, 10, 6, 2);
  FitConfig config;
  config.tol = 1e-10;
  const FittedModel model = fit_mode(data, default_hyper(0.8), config);

  FidelityDataset flipped = data;
  for (Index i = 0; i < flipped.y_low.size(); ++i) flipped.y_low[i] = 1 - flipped.y_low[i];
  for (Index i = 0; i < flipped.y_high.size(); ++i) flipped.y_high[i] = 1 - flipped.y_high[i];
  const FittedModel neg = fit_mode(flipped, default_hyper(0.8), config);
  CHECK((model.xi_hat.values + neg.xi_hat.values).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("fit_mode reaches stationarity and the stored marginal recomputes") {
  for (std::uint64_t seed : {11, 12, 13}) {
    const FidelityDataset data = balanced_dataset(seed, 20, 10, 2);
    const double rho = seed == 12 ? -1.5 : 0.7;
    const FittedModel model = fit_mode(data, default_hyper(rho));
    CHECK(model.converged);
    CHECK(model.grad_inf_norm < model.config.tol);
    CHECK(log_marginal(model) == doctest::Approx(model.log_marginal).epsilon(1e-10));
    // B >= I so log|B| >= 0, hence L <= lambda(xi_hat)
    CHECK(model.log_det_b >= 0.0);
    CHECK(model.log_marginal <= log_likelihood(model.xi_hat, data, rho) + 1e-12);
  }
}

TEST_CASE("fit_mode converges within 50 iterations at protocol scale") {
  const FidelityDataset data = balanced_dataset(17, 150, 75, 2);
  FitConfig config;
  config.max_iters = 50;
  const FittedModel model = fit_mode(data, default_hyper(1.2), config);
  CHECK(model.converged);
  CHECK(model.newton_iters <= 50);
}

TEST_CASE("Psi concavity: W + K^{-1} has nonnegative eigenvalues") {
  for (std::uint64_t seed : {21, 22, 23, 24}) {
    Rng rng(seed);
    const double rho = rng.uniform(-2.5, 2.5);
    auto inst = random_instance(seed, 12, 6, 2, rho, 2.0, true);
    const Prior prior = build_prior(inst.data, inst.hyper);
    const Matrix k_inv = prior.K.llt().solve(Matrix::Identity(prior.K.rows(), prior.K.rows()));
    const Matrix h = curvature(inst.xi, inst.data, rho).dense() + k_inv;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (h + h.transpose()));
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
  }
}

TEST_CASE("log_marginal is invariant under within-fidelity permutation") {
  const FidelityDataset data = balanced_dataset(31, 8, 5, 2);
  const FittedModel model = fit_mode(data, default_hyper(0.9));

  FidelityDataset perm = data;
  // rotate low-fidelity rows by 3, high-fidelity rows by 2
  for (Index i = 0; i < data.n_low(); ++i) {
    perm.X_low.row(i) = data.X_low.row((i + 3) % data.n_low());
    perm.y_low[i] = data.y_low[(i + 3) % data.n_low()];
  }
  for (Index i = 0; i < data.n_high(); ++i) {
    perm.X_high.row(i) = data.X_high.row((i + 2) % data.n_high());
    perm.y_high[i] = data.y_high[(i + 2) % data.n_high()];
  }
  const FittedModel pm = fit_mode(perm, default_hyper(0.9));
  CHECK(model.log_marginal == doctest::Approx(pm.log_marginal).epsilon(1e-8));
}

TEST_CASE("log_marginal matches 3-dimensional quadrature for n_l = n_h = 1") {
  // Draws stay in the small-amplitude regime where the Gaussian approximation
  // itself is accurate to well under the 1e-3 tolerance; any formula error
  // (signs, blocks, determinant) would still blow the bound at any amplitude.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 500);
    FidelityDataset data;
    data.X_low = testsupport::random_points(rng, 1, 2);
    data.y_low = IntVector::Ones(1);
    data.X_high = testsupport::random_points(rng, 1, 2);
    data.y_high = IntVector::Zero(1);
    Hyperparams hyper;
    hyper.rho = rng.uniform(-1.5, 1.5);
    hyper.theta_l = RbfParams(rng.uniform(-3.5, -2.3), rng.uniform(0.3, 2.0));
    hyper.theta_d = RbfParams(rng.uniform(-3.5, -2.3), rng.uniform(0.3, 2.0));
    FitConfig config;
    config.tol = 1e-10;
    const FittedModel model = fit_mode(data, hyper, config);
    const double exact = quadrature_log_marginal(data, hyper, model.prior, 64);
    const double exact_check = quadrature_log_marginal(data, hyper, model.prior, 48);
    CHECK(std::abs(exact - exact_check) < 1e-9);  // quadrature is converged
    CHECK(std::abs(model.log_marginal - exact) < 1e-3);
  }
}

TEST_CASE("doubling jitter moves the marginal by less than 1e-4") {
  const FidelityDataset data = balanced_dataset(41, 10, 5, 2);
  FitConfig config;
  const FittedModel a = fit_mode(data, default_hyper(), config);
  config.jitter_rel *= 10.0;
  const FittedModel b = fit_mode(data, default_hyper(), config);
  CHECK(std::abs(a.log_marginal - b.log_marginal) < 1e-4);
}

TEST_CASE("grad_hyper matches end-to-end finite differences across rho values") {
  const double rhos[] = {-2.0, -0.5, 0.0, 0.5, 1.0, 2.0};
  int checked = 0;
  for (int rep = 0; rep < 2; ++rep) {
    for (double rho : rhos) {
      const std::uint64_t seed = 1000 + checked;
      const FidelityDataset data = balanced_dataset(seed, 9, 5, 2);
      Rng rng(seed);
      Hyperparams hyper;
      hyper.rho = rho;
      hyper.theta_l = RbfParams(rng.uniform(-0.5, 0.8), rng.uniform(0.4, 1.2));
      hyper.theta_d = RbfParams(rng.uniform(-0.5, 0.8), rng.uniform(0.4, 1.2));
      FitConfig config;
      config.tol = 1e-10;
      config.max_iters = 200;

      const FittedModel model = fit_mode(data, hyper, config);
      const HyperGradients g = grad_hyper(model);

      const double h = 1e-4;
      auto refit = [&](const Hyperparams& hp) { return fit_mode(data, hp, config).log_marginal; };
      auto central = [&](auto&& set) {
        Hyperparams up = hyper, dn = hyper;
        set(up, +h);
        set(dn, -h);
        return (refit(up) - refit(dn)) / (2.0 * h);
      };

      const double fd_rho = central([](Hyperparams& hp, double d) { hp.rho += d; });
      const double fd_sl = central(
          [](Hyperparams& hp, double d) { hp.theta_l = RbfParams(hp.theta_l.s() + d, hp.theta_l.sigma()); });
      const double fd_sigl = central(
          [](Hyperparams& hp, double d) { hp.theta_l = RbfParams(hp.theta_l.s(), hp.theta_l.sigma() + d); });
      const double fd_sd = central(
          [](Hyperparams& hp, double d) { hp.theta_d = RbfParams(hp.theta_d.s() + d, hp.theta_d.sigma()); });
      const double fd_sigd = central(
          [](Hyperparams& hp, double d) { hp.theta_d = RbfParams(hp.theta_d.s(), hp.theta_d.sigma() + d); });

      Vector got(5), want(5);
      got << g.d_rho, g.d_s_l, g.d_sigma_l, g.d_s_d, g.d_sigma_d;
      want << fd_rho, fd_sl, fd_sigl, fd_sd, fd_sigd;
      CHECK(rel_err(got, want) < 1e-3);
      ++checked;
    }
  }
  CHECK(checked >= 12);
}

TEST_CASE("grad_hyper with no high-fidelity data zeroes rho and theta_d gradients") {
  FidelityDataset data = balanced_dataset(51, 10, 4, 2);
  data.X_high.resize(0, 2);
  data.y_high.resize(0);
  const FittedModel model = fit_mode(data, default_hyper(0.7));
  const HyperGradients g = grad_hyper(model);
  CHECK(g.d_rho == 0.0);
  CHECK(g.d_s_d == 0.0);
  CHECK(g.d_sigma_d == 0.0);
  CHECK(g.d_s_l != 0.0);
}

TEST_CASE("grad_hyper rejects an unconverged model") {
  FittedModel model;
  model.converged = false;
  CHECK_THROWS_AS(grad_hyper(model), InputError);
}

TEST_CASE("duplicating every training point preserves gradient signs") {
  const FidelityDataset data = balanced_dataset(61, 6, 4, 2);
  FitConfig config;
  config.tol = 1e-10;
  const FittedModel model = fit_mode(data, default_hyper(0.8), config);
  const HyperGradients g1 = grad_hyper(model);

  FidelityDataset doubled;
  doubled.X_low.resize(12, 2);
  doubled.X_low << data.X_low, data.X_low;
  doubled.y_low.resize(12);
  doubled.y_low << data.y_low, data.y_low;
  doubled.X_high.resize(8, 2);
  doubled.X_high << data.X_high, data.X_high;
  doubled.y_high.resize(8);
  doubled.y_high << data.y_high, data.y_high;
  const FittedModel m2 = fit_mode(doubled, default_hyper(0.8), config);
  const HyperGradients g2 = grad_hyper(m2);

  auto same_sign = [](double a, double b) { return a == 0.0 || b == 0.0 || (a > 0) == (b > 0); };
  CHECK(same_sign(g1.d_rho, g2.d_rho));
  CHECK(same_sign(g1.d_s_l, g2.d_s_l));
  CHECK(same_sign(g1.d_sigma_l, g2.d_sigma_l));
}

TEST_CASE("predict: far test points fall back to probability 1/2") {
  const FidelityDataset data = balanced_dataset(71, 8, 5, 2);
  const FittedModel model = fit_mode(data, default_hyper());
  Matrix far(1, 2);
  far << 50.0, -50.0;  // >> 10 sigma away
  const auto scores = predict(model, far);
  CHECK(std::abs(scores[0].latent_mean) < 1e-12);
  CHECK(scores[0].probability == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("predict: label flip negates every latent mean") {
  const FidelityDataset data = balanced_dataset(72, 8, 5, 2);
  FitConfig config;
  config.tol = 1e-10;
  const FittedModel model = fit_mode(data, default_hyper(1.1), config);
  FidelityDataset flipped = data;
  for (Index i = 0; i < flipped.y_low.size(); ++i) flipped.y_low[i] = 1 - flipped.y_low[i];
  for (Index i = 0; i < flipped.y_high.size(); ++i) flipped.y_high[i] = 1 - flipped.y_high[i];
  const FittedModel neg = fit_mode(flipped, default_hyper(1.1), config);

  Rng rng(5);
  const Matrix x_star = testsupport::random_points(rng, 7, 2);
  const auto a = predict(model, x_star);
  const auto b = predict(neg, x_star);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a[i].latent_mean == doctest::Approx(-b[i].latent_mean).epsilon(1e-7));
}

TEST_CASE("predict rejects dimension mismatch, labels follow the mean sign") {
  const FidelityDataset data = balanced_dataset(73, 6, 4, 2);
  const FittedModel model = fit_mode(data, default_hyper());
  CHECK_THROWS_AS(predict(model, Matrix::Zero(1, 3)), InputError);
  Rng rng(9);
  for (const auto& s : predict(model, testsupport::random_points(rng, 5, 2))) {
    CHECK(s.probability == doctest::Approx(sigmoid(s.latent_mean)));
    CHECK(s.label == (s.latent_mean > 0 ? 1 : 0));
  }
}

TEST_CASE("model serialization round-trips predictions to 1e-12") {
  const FidelityDataset data = balanced_dataset(81, 7, 4, 2);
  const FittedModel model = fit_mode(data, default_hyper(1.3));
  const std::string path = "test_model_roundtrip.json";
  save_model(model, path, OutputMeta{"unit-test", 81});
  const FittedModel loaded = load_model(path);

  Rng rng(82);
  const Matrix x_star = testsupport::random_points(rng, 9, 2);
  const auto a = predict(model, x_star);
  const auto b = predict(loaded, x_star);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(a[i].latent_mean - b[i].latent_mean) < 1e-12);
    CHECK(a[i].label == b[i].label);
  }
  CHECK(loaded.log_marginal == model.log_marginal);
  CHECK(log_marginal(loaded) == doctest::Approx(loaded.log_marginal).epsilon(1e-10));
  std::remove(path.c_str());
}

TEST_CASE("corrupted model data fails the checksum") {
  const FidelityDataset data = balanced_dataset(91, 5, 3, 2);
  const FittedModel model = fit_mode(data, default_hyper());
  Json j = model_to_json(model, OutputMeta{"unit-test", 91});
  j["data"]["X_low"][0][0] = 123.456;
  CHECK_THROWS_AS(model_from_json(j), InputError);
}
