#include <doctest.h>

#include <mfgpc/datagen.hpp>
#include <mfgpc/hyperopt.hpp>

#include "support.hpp"

using namespace mfgpc;

namespace {

OptConfig small_budget(std::uint64_t seed) {
  OptConfig c;
  c.restarts = 2;
  c.max_steps = 20;
  c.grad_tol = 1e-3;
  c.seed = seed;
  c.fit.tol = 1e-8;
  return c;
}

/// GP draws do not promise class balance; walk the seed forward until the
/// training sample has both classes per fidelity (as the harness resampler
/// effectively does).
SyntheticDataset generate_balanced(SynthesisSpec spec) {
  for (int tries = 0; tries < 50; ++tries) {
    SyntheticDataset gen = generate_synthetic(spec);
    try {
      gen.train.validate_for_training();
      return gen;
    } catch (const InputError&) {
      ++spec.seed;
    }
  }
  throw NumericalError("generate_balanced: no balanced draw in 50 seeds");
}

}  // namespace

TEST_CASE("optimize beats the seeded default hyperparameters") {
  const SyntheticDataset gen = generate_balanced([] {
    SynthesisSpec s = SynthesisSpec::defaults(2);
    s.n_low = 40;
    s.n_high = 20;
    s.n_test = 20;
    s.seed = 5;
    s.probe_points = 512;
    return s;
  }());
  const OptConfig config = small_budget(5);
  const FittedModel tuned = optimize(gen.train, config);

  Matrix x_all(gen.train.n_low() + gen.train.n_high(), 2);
  x_all << gen.train.X_low, gen.train.X_high;
  Hyperparams default_hyper;
  default_hyper.rho = 1.0;
  default_hyper.theta_l = RbfParams(0.0, median_pairwise_distance(x_all));
  default_hyper.theta_d = RbfParams(0.0, median_pairwise_distance(gen.train.X_high));
  const FittedModel at_default = fit_mode(gen.train, default_hyper, config.fit);
  CHECK(tuned.log_marginal >= at_default.log_marginal - 1e-9);
}

TEST_CASE("optimize is deterministic under a fixed seed") {
  const SyntheticDataset gen = generate_balanced([] {
    SynthesisSpec s = SynthesisSpec::defaults(2);
    s.n_low = 30;
    s.n_high = 15;
    s.n_test = 10;
    s.seed = 9;
    s.probe_points = 512;
    return s;
  }());
  const OptConfig config = small_budget(9);
  const FittedModel a = optimize(gen.train, config);
  const FittedModel b = optimize(gen.train, config);
  CHECK(a.hyper.rho == b.hyper.rho);
  CHECK(a.hyper.theta_l.s() == b.hyper.theta_l.s());
  CHECK(a.hyper.theta_l.sigma() == b.hyper.theta_l.sigma());
  CHECK(a.hyper.theta_d.s() == b.hyper.theta_d.s());
  CHECK(a.log_marginal == b.log_marginal);
  CHECK((a.xi_hat.values - b.xi_hat.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("optimize with parallel restarts matches the serial result") {
  const SyntheticDataset gen = generate_balanced([] {
    SynthesisSpec s = SynthesisSpec::defaults(2);
    s.n_low = 24;
    s.n_high = 12;
    s.n_test = 10;
    s.seed = 13;
    s.probe_points = 512;
    return s;
  }());
  OptConfig serial = small_budget(13);
  OptConfig parallel = serial;
  parallel.jobs = 2;
  const FittedModel a = optimize(gen.train, serial);
  const FittedModel b = optimize(gen.train, parallel);
  CHECK(a.hyper.rho == b.hyper.rho);
  CHECK(a.log_marginal == b.log_marginal);
}

TEST_CASE("optimize recovers the sign of rho on generated data") {
  // generated with rho* > 0; the tuned rho should be positive in >= 9/10 seeds
  int correct = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthesisSpec spec = SynthesisSpec::defaults(2);
    spec.n_low = 60;
    spec.n_high = 30;
    spec.n_test = 10;
    spec.noise_level = 0.15;
    spec.seed = 100 + seed;
    spec.probe_points = 512;
    const SyntheticDataset gen = generate_balanced(spec);
    OptConfig config = small_budget(seed);
    config.restarts = 3;  // includes a negative-rho restart
    try {
      const FittedModel tuned = optimize(gen.train, config);
      if (tuned.hyper.rho > 0.0) ++correct;
    } catch (const NumericalError&) {
    }
  }
  CHECK(correct >= 9);
}

TEST_CASE("optimize gradient at the returned optimum is small on an easy instance") {
  // Bernoulli-drawn labels keep the evidence optimum at moderate amplitude,
  // away from the search box where the raw gradient need not vanish.
  const SyntheticDataset gen = generate_balanced([] {
    SynthesisSpec s = SynthesisSpec::defaults(2);
    s.n_low = 30;
    s.n_high = 15;
    s.n_test = 10;
    s.seed = 33;
    s.probe_points = 512;
    s.bernoulli_labels = true;
    return s;
  }());
  OptConfig config;
  config.restarts = 1;
  config.max_steps = 200;
  config.grad_tol = 1e-4;
  config.seed = 33;
  config.fit.tol = 1e-10;
  const FittedModel tuned = optimize(gen.train, config);
  const HyperGradients g = grad_hyper(tuned);
  Vector grad(5);
  grad << g.d_rho, g.d_s_l, g.d_sigma_l * tuned.hyper.theta_l.sigma(), g.d_s_d,
      g.d_sigma_d * tuned.hyper.theta_d.sigma();
  CHECK(grad.cwiseAbs().maxCoeff() < 10.0 * config.grad_tol);
}

TEST_CASE("optimize validates the dataset and the config") {
  FidelityDataset single_class;
  single_class.X_low = Matrix::Zero(3, 1);
  single_class.y_low = IntVector::Ones(3);
  single_class.X_high = Matrix::Zero(2, 1);
  single_class.y_high = IntVector::Zero(2);
  single_class.y_high[0] = 1;
  CHECK_THROWS_WITH_AS(optimize(single_class), doctest::Contains("low-fidelity"), InputError);

  OptConfig bad;
  bad.restarts = 0;
  CHECK_THROWS_AS(bad.validate(), InputError);
}

TEST_CASE("accepted ascent steps never decrease the objective") {
  std::vector<double> accepted_values;
  auto objective = [&](const Vector& x, Vector* grad) {
    const double v = -(x[0] - 1.0) * (x[0] - 1.0) - 2.0 * (x[1] + 0.5) * (x[1] + 0.5);
    if (grad) {
      (*grad)[0] = -2.0 * (x[0] - 1.0);
      (*grad)[1] = -4.0 * (x[1] + 0.5);
      accepted_values.push_back(v);  // gradient evaluations happen only at accepted points
    }
    return v;
  };
  Vector x0(2);
  x0 << -3.0, 2.0;
  AscentConfig cfg;
  cfg.grad_tol = 1e-10;
  const AscentResult res = bfgs_maximize(objective, x0, cfg);
  CHECK(res.converged);
  CHECK(res.value == doctest::Approx(0.0).epsilon(1e-8));
  for (std::size_t i = 1; i < accepted_values.size(); ++i)
    CHECK(accepted_values[i] > accepted_values[i - 1]);
}

TEST_CASE("hyperparameter search respects the box penalty") {
  // an instance whose unpenalized evidence optimum is the degenerate
  // sigma -> 0 corner; the barrier must keep the search away from it
  const SyntheticDataset gen = generate_balanced([] {
    SynthesisSpec s = SynthesisSpec::defaults(2);
    s.n_low = 50;
    s.n_high = 20;
    s.n_test = 10;
    s.noise_level = 0.0;
    s.seed = 77;
    s.probe_points = 512;
    return s;
  }());
  OptConfig config = small_budget(77);
  config.restarts = 3;
  config.max_steps = 60;
  const FittedModel tuned = optimize(gen.train, config);
  Matrix x_all(gen.train.n_low() + gen.train.n_high(), 2);
  x_all << gen.train.X_low, gen.train.X_high;
  const double scale = median_pairwise_distance(x_all);
  CHECK(tuned.hyper.theta_l.log_sigma() > std::log(scale) + std::log(0.05) - 0.5);
  CHECK(tuned.hyper.theta_l.s() < 4.5);
}
