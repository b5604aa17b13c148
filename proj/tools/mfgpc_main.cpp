// mfgpc command-line front door: generation, training, prediction, evaluation
// and verification as reproducible seeded invocations. Every output file
// embeds the tool version, the full command line and the master seed.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <mfgpc/datagen.hpp>
#include <mfgpc/evalharness.hpp>
#include <mfgpc/hyperopt.hpp>
#include <mfgpc/mcmc.hpp>
#include <mfgpc/metrics.hpp>
#include <mfgpc/model_io.hpp>
#include <mfgpc/oracles.hpp>
#include <mfgpc/single_fidelity.hpp>
#include <mfgpc/version.hpp>

using namespace mfgpc;

namespace {

std::string g_command_line;

std::vector<std::string> provenance(std::uint64_t seed) {
  return {std::string("mfgpc-version: ") + kVersion, "command: " + g_command_line,
          "seed: " + std::to_string(seed)};
}

OutputMeta meta_of(std::uint64_t seed) { return OutputMeta{g_command_line, seed}; }

Json meta_json(std::uint64_t seed) {
  return Json{{"version", kVersion}, {"command", g_command_line}, {"seed", seed}};
}

void write_json(const Json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

std::vector<double> parse_grid(const std::string& s) {
  // "lo:hi:count" inclusive linspace, or a comma list "a,b,c"
  if (s.find(':') != std::string::npos) {
    double lo, hi;
    int count;
    if (std::sscanf(s.c_str(), "%lf:%lf:%d", &lo, &hi, &count) != 3 || count < 1)
      throw InputError("bad grid '" + s + "', expected lo:hi:count");
    std::vector<double> out;
    for (int i = 0; i < count; ++i)
      out.push_back(count == 1 ? lo : lo + (hi - lo) * i / static_cast<double>(count - 1));
    return out;
  }
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0') throw InputError("bad numeric list entry '" + cell + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InputError("empty numeric list");
  return out;
}

SynthesisSpec spec_from_flags(Index dim, Index n_low, Index n_high, Index n_test, double noise,
                              std::uint64_t seed, double s_l, double sigma_l, double s_d, double sigma_d,
                              bool bernoulli) {
  SynthesisSpec spec = SynthesisSpec::defaults(dim);
  spec.n_low = n_low;
  spec.n_high = n_high;
  spec.n_test = n_test;
  spec.noise_level = noise;
  spec.seed = seed;
  spec.bernoulli_labels = bernoulli;
  spec.kernel_l = RbfParams(s_l, sigma_l > 0.0 ? sigma_l : spec.kernel_l.sigma());
  spec.kernel_d = RbfParams(s_d, sigma_d > 0.0 ? sigma_d : spec.kernel_d.sigma());
  spec.validate();
  return spec;
}

BenchmarkDataset balanced_pool(SynthesisSpec spec, const std::string& id, int max_tries = 100) {
  for (int t = 0; t < max_tries; ++t) {
    SyntheticDataset gen = generate_synthetic(spec);
    try {
      gen.train.validate_for_training();
      gen.test.validate_for_training();
      return BenchmarkDataset{id, std::move(gen.train), std::move(gen.test), spec.noise_level};
    } catch (const InputError&) {
      ++spec.seed;
    }
  }
  throw NumericalError("could not draw a class-balanced pool for dataset '" + id + "'");
}

Vector probabilities(const std::vector<PredictionScore>& scores) {
  Vector p(static_cast<Index>(scores.size()));
  for (Index i = 0; i < p.size(); ++i) p[i] = scores[static_cast<std::size_t>(i)].probability;
  return p;
}

// ---- generate -----------------------------------------------------------------

int cmd_generate(Index dim, Index n_low, Index n_high, Index n_test, double noise, std::uint64_t seed,
                 const std::string& out, double s_l, double sigma_l, double s_d, double sigma_d,
                 bool bernoulli) {
  const SynthesisSpec spec =
      spec_from_flags(dim, n_low, n_high, n_test, noise, seed, s_l, sigma_l, s_d, sigma_d, bernoulli);
  const SyntheticDataset gen = generate_synthetic(spec);
  save_dataset(gen.train, out + "_train.csv", provenance(seed));
  save_sf_dataset(gen.test, out + "_test.csv", provenance(seed));
  save_ground_truth(gen, spec, out + "_truth.json", g_command_line);
  std::cout << "generated " << gen.train.n_low() << " low + " << gen.train.n_high() << " high + "
            << gen.test.n() << " test points (dim " << dim << ")\n"
            << "fitted rho " << format_double(gen.truth.rho) << ", probe disagreement "
            << format_double(gen.truth.achieved_disagreement) << "\n"
            << "wrote " << out << "_train.csv, " << out << "_test.csv, " << out << "_truth.json\n";
  return 0;
}

// ---- train --------------------------------------------------------------------

int cmd_train(const std::string& data_path, const std::string& out, const std::string& report_path,
              const OptConfig& opt) {
  const FidelityDataset data = load_dataset(data_path);
  data.validate_for_training();
  const FittedModel model = optimize(data, opt);
  save_model(model, out, meta_of(opt.seed));

  Json report;
  report["format"] = "mfgpc-training-report";
  report["meta"] = meta_json(opt.seed);
  report["log_marginal"] = model.log_marginal;
  report["rho"] = model.hyper.rho;
  report["s_l"] = model.hyper.theta_l.s();
  report["sigma_l"] = model.hyper.theta_l.sigma();
  report["s_d"] = model.hyper.theta_d.s();
  report["sigma_d"] = model.hyper.theta_d.sigma();
  report["newton_iters"] = model.newton_iters;
  report["grad_inf_norm"] = model.grad_inf_norm;
  report["n_low"] = data.n_low();
  report["n_high"] = data.n_high();
  write_json(report, report_path.empty() ? out + ".report.json" : report_path);

  std::cout << "trained on " << data.n_low() << " low + " << data.n_high() << " high points\n"
            << "log marginal likelihood " << format_double(model.log_marginal) << "\n"
            << "rho " << format_double(model.hyper.rho) << "  theta_l (s "
            << format_double(model.hyper.theta_l.s()) << ", sigma "
            << format_double(model.hyper.theta_l.sigma()) << ")  theta_d (s "
            << format_double(model.hyper.theta_d.s()) << ", sigma "
            << format_double(model.hyper.theta_d.sigma()) << ")\n"
            << "wrote " << out << "\n";
  return 0;
}

// ---- predict ------------------------------------------------------------------

int cmd_predict(const std::string& model_path, const std::string& data_path, const std::string& out) {
  const int fidelities = model_fidelities(model_path);
  const FittedModel model = load_model(model_path);
  const FidelityDataset raw = load_dataset(data_path);
  Matrix x(raw.n_low() + raw.n_high(), raw.dim());
  if (raw.n_low() > 0) x.topRows(raw.n_low()) = raw.X_low;
  if (raw.n_high() > 0) x.bottomRows(raw.n_high()) = raw.X_high;

  std::vector<PredictionScore> scores;
  if (fidelities == 1) {
    SfModel sf;
    sf.data = SfDataset{model.data.X_low, model.data.y_low};
    sf.params = model.hyper.theta_l;
    sf.inner = model;
    scores = sf_predict(sf, x);
  } else {
    scores = predict(model, x);
  }

  std::ofstream f(out);
  if (!f) throw InputError("cannot open " + out + " for writing");
  for (const auto& line : provenance(0)) f << "# " << line << "\n";
  f << "point_id,latent_mean,probability,label\n";
  for (std::size_t i = 0; i < scores.size(); ++i)
    f << i << "," << format_double(scores[i].latent_mean) << "," << format_double(scores[i].probability)
      << "," << scores[i].label << "\n";
  std::cout << "wrote " << scores.size() << " predictions to " << out << "\n";
  return 0;
}

// ---- evaluate -----------------------------------------------------------------

struct DatasetFlag {
  std::string id;
  std::string train_path;
  std::string test_path;  // optional
};

DatasetFlag parse_dataset_flag(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos)
    throw InputError("dataset flag must be id=train.csv[:test.csv], got '" + s + "'");
  DatasetFlag out;
  out.id = s.substr(0, eq);
  const std::string rest = s.substr(eq + 1);
  const auto colon = rest.find(':');
  out.train_path = rest.substr(0, colon == std::string::npos ? rest.size() : colon);
  if (colon != std::string::npos) out.test_path = rest.substr(colon + 1);
  return out;
}

int cmd_evaluate(const std::vector<std::string>& dataset_flags, const std::string& methods_csv,
                 const std::vector<std::string>& score_flags, BenchmarkProtocol protocol,
                 const std::string& out, const std::string& profile_out, const std::string& thresholds) {
  std::vector<BenchmarkDataset> datasets;
  for (const auto& flag : dataset_flags) {
    const DatasetFlag df = parse_dataset_flag(flag);
    BenchmarkDataset d;
    d.id = df.id;
    d.pool = load_dataset(df.train_path);
    if (!df.test_path.empty()) {
      d.test = load_sf_dataset(df.test_path);
    } else {
      d.test.X.resize(0, d.pool.dim());
      d.test.y.resize(0);
    }
    datasets.push_back(std::move(d));
  }
  if (datasets.empty()) throw InputError("evaluate: need at least one --dataset");

  std::vector<std::string> methods;
  std::stringstream ss(methods_csv);
  std::string m;
  while (std::getline(ss, m, ',')) methods.push_back(m);

  BenchmarkResult result = run_benchmark(datasets, methods, protocol);

  // external score files: name=path with rows dataset_id,point_id,score
  for (const auto& flag : score_flags) {
    const auto eq = flag.find('=');
    if (eq == std::string::npos) throw InputError("scores flag must be name=path, got '" + flag + "'");
    const std::string name = flag.substr(0, eq);
    const auto by_dataset = load_external_scores(flag.substr(eq + 1));
    for (const auto& dataset : datasets) {
      const auto it = by_dataset.find(dataset.id);
      if (it == by_dataset.end()) continue;
      if (dataset.test.n() == 0) {
        result.failures.push_back(
            RunFailure{dataset.id, name, 0, "external scores need an explicit test set"});
        continue;
      }
      Vector scores = Vector::Constant(dataset.test.n(), std::numeric_limits<double>::quiet_NaN());
      bool ok = true;
      for (const auto& [pid, score] : it->second) {
        if (pid < 0 || pid >= dataset.test.n()) {
          result.failures.push_back(
              RunFailure{dataset.id, name, 0, "point_id " + std::to_string(pid) + " out of range"});
          ok = false;
          break;
        }
        scores[pid] = score;
      }
      if (!ok) continue;
      if (scores.hasNaN()) {
        result.failures.push_back(
            RunFailure{dataset.id, name, 0, "score file does not cover every test point"});
        continue;
      }
      RunRecord r;
      r.dataset_id = dataset.id;
      r.method = name;
      r.seed = protocol.seed;
      r.run_index = 0;
      r.roc_auc = roc_auc(scores, dataset.test.y);
      r.noise_level = dataset.noise_level;
      result.records.push_back(std::move(r));
    }
  }

  write_records_csv(result.records, out, provenance(protocol.seed));
  if (!profile_out.empty()) {
    const std::vector<double> grid = parse_grid(thresholds);
    write_profile_csv(auc_profile(result.records, grid), grid, profile_out, provenance(protocol.seed));
  }

  std::map<std::string, std::pair<double, int>> by_method;
  for (const auto& r : result.records) {
    by_method[r.method].first += r.roc_auc;
    by_method[r.method].second += 1;
  }
  for (const auto& [method, acc] : by_method)
    std::cout << method << ": mean ROC AUC " << format_double(acc.first / acc.second) << " over "
              << acc.second << " runs\n";
  for (const auto& f : result.failures)
    std::cerr << "failure: " << f.dataset_id << "/" << f.method << " run " << f.run_index << ": "
              << f.error << "\n";
  std::cout << "wrote " << out << "\n";
  return result.records.empty() ? 2 : 0;
}

// ---- budget -------------------------------------------------------------------

int cmd_budget(Index dim, const std::string& noises_csv, const std::string& shares_csv,
               const std::string& fractions_csv, int runs, std::uint64_t seed, double budget,
               Index pool_low, Index pool_high, Index pool_test, const OptConfig& opt, int jobs,
               const std::string& out) {
  const std::vector<double> noises = parse_grid(noises_csv);
  const std::vector<double> shares = parse_grid(shares_csv);
  const std::vector<double> fractions = parse_grid(fractions_csv);

  const PoolGenerator generator = [&](double noise, std::uint64_t pool_seed) {
    SynthesisSpec spec = SynthesisSpec::defaults(dim);
    spec.n_low = pool_low;
    spec.n_high = pool_high;
    spec.n_test = pool_test;
    spec.noise_level = noise;
    spec.seed = pool_seed;
    return balanced_pool(spec, "budget-pool");
  };

  const std::vector<BudgetCell> cells =
      budget_sweep(generator, shares, fractions, noises, runs, seed, budget, opt, jobs);
  write_budget_csv(cells, out, provenance(seed));
  for (const auto& c : cells)
    std::cout << "noise " << c.noise_level << " lf-cost " << c.lf_cost_fraction << " hf-share "
              << c.hf_share << " " << c.method << ": mean AUC " << format_double(c.mean_auc) << " (se "
              << format_double(c.std_error) << ", " << c.runs_ok << " runs)"
              << (c.note.empty() ? "" : " [" + c.note + "]") << "\n";
  std::cout << "wrote " << out << "\n";
  return 0;
}

// ---- sensitivity ----------------------------------------------------------------

int cmd_sensitivity(const std::string& model_path, const std::string& validation_path,
                    const std::string& axis_name, const std::string& grid_a, const std::string& grid_s,
                    const std::string& grid_sigma, const std::string& out) {
  const FittedModel model = load_model(model_path);
  if (!model.converged) throw InputError("sensitivity: model is not converged");
  const SfDataset validation = load_sf_dataset(validation_path);
  const SensitivityAxis axis = sensitivity_axis_from_string(axis_name);

  std::vector<std::array<double, 2>> grid;
  if (axis == SensitivityAxis::rho) {
    if (grid_a.empty()) throw InputError("sensitivity: rho axis needs --grid");
    for (double v : parse_grid(grid_a)) grid.push_back({v, 0.0});
  } else {
    if (grid_s.empty() || grid_sigma.empty())
      throw InputError("sensitivity: theta axes need --grid-s and --grid-sigma");
    for (double s : parse_grid(grid_s))
      for (double sig : parse_grid(grid_sigma)) grid.push_back({s, sig});
  }

  const auto points = sensitivity_grid(model, validation, axis, grid);
  write_sensitivity_csv(points, axis, out, provenance(0));
  int missing = 0;
  for (const auto& p : points) missing += p.ok ? 0 : 1;
  std::cout << "evaluated " << points.size() << " grid points (" << missing << " missing) on axis "
            << axis_name << "\n"
            << "wrote " << out << "\n";
  return 0;
}

// ---- gradcheck -------------------------------------------------------------------

int cmd_gradcheck(std::uint64_t seed, Index dim, Index n_low, Index n_high, int instances,
                  double module_threshold, double hyper_threshold, const std::string& out) {
  double worst_loglik = 0.0, worst_curv = 0.0, worst_rho = 0.0, worst_tdc = 0.0, worst_hyper = 0.0;

  for (int inst = 0; inst < instances; ++inst) {
    Rng rng(derive_seed(seed, 0x67726164ULL, static_cast<std::uint64_t>(inst)));
    FidelityDataset data;
    data.X_low.resize(n_low, dim);
    data.X_high.resize(n_high, dim);
    for (Index i = 0; i < n_low; ++i)
      for (Index j = 0; j < dim; ++j) data.X_low(i, j) = rng.uniform();
    for (Index i = 0; i < n_high; ++i)
      for (Index j = 0; j < dim; ++j) data.X_high(i, j) = rng.uniform();
    data.y_low.resize(n_low);
    data.y_high.resize(n_high);
    for (Index i = 0; i < n_low; ++i) data.y_low[i] = rng.uniform() < 0.5 ? 1 : 0;
    for (Index i = 0; i < n_high; ++i) data.y_high[i] = rng.uniform() < 0.5 ? 1 : 0;
    if (n_low >= 2) {
      data.y_low[0] = 0;
      data.y_low[1] = 1;
    }
    if (n_high >= 2) {
      data.y_high[0] = 0;
      data.y_high[1] = 1;
    }
    const double rho_values[] = {-2.0, -0.5, 0.0, 0.5, 1.0, 2.0};
    const double rho = rho_values[inst % 6];
    Hyperparams hyper;
    hyper.rho = rho;
    hyper.theta_l = RbfParams(rng.uniform(-0.5, 0.8), rng.uniform(0.4, 1.2));
    hyper.theta_d = RbfParams(rng.uniform(-0.5, 0.8), rng.uniform(0.4, 1.2));
    LatentVector xi = LatentVector::zeros(data);
    for (Index i = 0; i < xi.values.size(); ++i) xi.values[i] = 1.5 * rng.normal();
    const Index n = xi.size();

    // gradient of lambda vs finite differences
    {
      const Vector g = grad_log_likelihood(xi, data, rho);
      const Vector fd = finite_diff_gradient(
          [&](const Vector& v) { return log_likelihood(LatentVector::wrap(v, data), data, rho); },
          xi.values, 1e-5);
      worst_loglik = std::max(
          worst_loglik, (g - fd).cwiseAbs().maxCoeff() / std::max(fd.cwiseAbs().maxCoeff(), 1e-12));
    }
    // curvature vs second differences
    {
      const Matrix w = curvature(xi, data, rho).dense();
      const double h = 1e-4;
      double worst = 0.0;
      for (Index i = 0; i < n; ++i) {
        Vector e = Vector::Zero(n);
        e[i] = h;
        const Vector col = (grad_log_likelihood(LatentVector::wrap(xi.values + e, data), data, rho) -
                            grad_log_likelihood(LatentVector::wrap(xi.values - e, data), data, rho)) /
                           (2.0 * h);
        worst = std::max(worst, (w.col(i) + col).cwiseAbs().maxCoeff());
      }
      worst_curv = std::max(worst_curv, worst / 0.25);  // relative to the curvature scale
    }
    // explicit rho derivatives vs finite differences in rho
    {
      const auto ert = explicit_rho_terms(xi, data, rho);
      const double h = 1e-6;
      const Vector fd_grad =
          (grad_log_likelihood(xi, data, rho + h) - grad_log_likelihood(xi, data, rho - h)) / (2.0 * h);
      worst_rho = std::max(worst_rho, (ert.d_grad_lambda_d_rho - fd_grad).cwiseAbs().maxCoeff() /
                                          std::max(fd_grad.cwiseAbs().maxCoeff(), 1e-12));
      const double fd_lambda =
          (log_likelihood(xi, data, rho + h) - log_likelihood(xi, data, rho - h)) / (2.0 * h);
      worst_rho = std::max(
          worst_rho, std::abs(ert.d_lambda_d_rho - fd_lambda) / std::max(std::abs(fd_lambda), 1e-12));
      const Matrix fd_w =
          (curvature(xi, data, rho + h).dense() - curvature(xi, data, rho - h).dense()) / (2.0 * h);
      worst_rho = std::max(worst_rho, (ert.d_w_d_rho - fd_w).cwiseAbs().maxCoeff() /
                                          std::max(fd_w.cwiseAbs().maxCoeff(), 1e-12));
    }
    // third-derivative contraction vs the dense Hadamard oracle
    {
      Matrix m(n, n);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j <= i; ++j) m(i, j) = m(j, i) = rng.normal();
      const Vector fast = third_derivative_contraction(m, xi, data, rho);
      double worst = 0.0;
      for (Index i = 0; i < n; ++i)
        worst = std::max(
            worst, std::abs(fast[i] - m.cwiseProduct(dense_curvature_derivative(xi, data, rho, i)).sum()));
      worst_tdc = std::max(worst_tdc, worst);
    }
    // end-to-end hyperparameter gradient vs refit finite differences
    {
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
      Vector got(5), want(5);
      got << g.d_rho, g.d_s_l, g.d_sigma_l, g.d_s_d, g.d_sigma_d;
      want << central([](Hyperparams& hp, double d) { hp.rho += d; }),
          central([](Hyperparams& hp, double d) {
            hp.theta_l = RbfParams(hp.theta_l.s() + d, hp.theta_l.sigma());
          }),
          central([](Hyperparams& hp, double d) {
            hp.theta_l = RbfParams(hp.theta_l.s(), hp.theta_l.sigma() + d);
          }),
          central([](Hyperparams& hp, double d) {
            hp.theta_d = RbfParams(hp.theta_d.s() + d, hp.theta_d.sigma());
          }),
          central([](Hyperparams& hp, double d) {
            hp.theta_d = RbfParams(hp.theta_d.s(), hp.theta_d.sigma() + d);
          });
      worst_hyper = std::max(
          worst_hyper, (got - want).cwiseAbs().maxCoeff() / std::max(want.cwiseAbs().maxCoeff(), 1e-12));
    }
  }

  const bool pass = worst_loglik < module_threshold && worst_curv < module_threshold &&
                    worst_rho < module_threshold && worst_tdc < 1e-10 && worst_hyper < hyper_threshold;
  Json j;
  j["format"] = "mfgpc-gradcheck";
  j["meta"] = meta_json(seed);
  j["instances"] = instances;
  j["max_rel_err"] = {{"grad_log_likelihood", worst_loglik},
                      {"curvature", worst_curv},
                      {"explicit_rho_terms", worst_rho},
                      {"third_derivative_contraction_abs", worst_tdc},
                      {"grad_hyper", worst_hyper}};
  j["thresholds"] = {{"module", module_threshold},
                     {"third_derivative_contraction_abs", 1e-10},
                     {"hyper", hyper_threshold}};
  j["pass"] = pass;
  if (!out.empty()) write_json(j, out);

  std::cout << (pass ? "PASS" : "FAIL") << ": max rel err"
            << "  grad_log_likelihood " << format_double(worst_loglik) << ", curvature "
            << format_double(worst_curv) << ", explicit_rho_terms " << format_double(worst_rho)
            << ", third_derivative_contraction (abs) " << format_double(worst_tdc) << ", grad_hyper "
            << format_double(worst_hyper) << "\n";
  return pass ? 0 : 2;
}

// ---- mcmc-check --------------------------------------------------------------------

int cmd_mcmc_check(std::uint64_t seed, Index dim, Index n_low, Index n_high, Index n_test, double noise,
                   int samples, int burn_in, int thin, int restarts, int max_steps, double fixed_rho,
                   double fixed_s, const std::string& out) {
  SynthesisSpec spec = SynthesisSpec::defaults(dim);
  spec.n_low = n_low + 40;
  spec.n_high = n_high + 20;
  spec.n_test = n_test;
  spec.noise_level = noise;
  spec.seed = seed;
  const BenchmarkDataset pool = balanced_pool(spec, "mcmc-check");

  auto [sub, used_high] =
      detail::protocol_subsample(pool.pool, n_low, n_high, derive_seed(seed, 1));
  FittedModel model;
  if (std::isfinite(fixed_rho)) {
    // shared fixed hyperparameters: amplitude from --fixed-s, median length-scales
    Matrix x_all(sub.n_low() + sub.n_high(), sub.dim());
    x_all << sub.X_low, sub.X_high;
    Hyperparams hyper;
    hyper.rho = fixed_rho;
    hyper.theta_l = RbfParams(fixed_s, median_pairwise_distance(x_all));
    hyper.theta_d = RbfParams(fixed_s, median_pairwise_distance(sub.X_high));
    FitConfig fit;
    fit.tol = 1e-8;
    model = fit_mode(sub, hyper, fit);
  } else {
    OptConfig opt = BenchmarkProtocol::desk_opt();
    opt.restarts = restarts;
    opt.max_steps = max_steps;
    opt.seed = derive_seed(seed, 0x6d636d63ULL);
    model = optimize(sub, opt);
  }

  const auto laplace_scores = predict(model, pool.test.X);
  const Vector laplace_probs = probabilities(laplace_scores);
  Vector laplace_means(static_cast<Index>(laplace_scores.size()));
  for (Index i = 0; i < laplace_means.size(); ++i)
    laplace_means[i] = laplace_scores[static_cast<std::size_t>(i)].latent_mean;

  McmcConfig mcfg;
  mcfg.n_samples = samples;
  mcfg.burn_in = burn_in;
  mcfg.thin = thin;
  mcfg.seed = derive_seed(seed, 2);
  const McmcPrediction mcmc = mcmc_posterior_predict(sub, model.hyper, pool.test.X, mcfg, model.config);

  const double corr = pearson_correlation(laplace_probs, mcmc.probabilities);
  const double auc_laplace = roc_auc(laplace_means, pool.test.y);
  const double auc_mcmc = roc_auc(mcmc.probabilities, pool.test.y);

  Json j;
  j["format"] = "mfgpc-mcmc-check";
  j["meta"] = meta_json(seed);
  j["auc_laplace"] = auc_laplace;
  j["auc_mcmc"] = auc_mcmc;
  j["auc_gap"] = std::abs(auc_laplace - auc_mcmc);
  j["probability_correlation"] = corr;
  j["mcmc"] = {{"kept", mcmc.diag.kept}, {"avg_shrinks", mcmc.diag.avg_shrinks}, {"ess", mcmc.diag.ess}};
  if (!out.empty()) write_json(j, out);

  std::cout << "Laplace AUC " << format_double(auc_laplace) << ", MCMC AUC " << format_double(auc_mcmc)
            << ", gap " << format_double(std::abs(auc_laplace - auc_mcmc)) << "\n"
            << "probability correlation " << format_double(corr) << " (kept " << mcmc.diag.kept
            << ", ESS " << format_double(mcmc.diag.ess) << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) g_command_line += std::string(i ? " " : "") + argv[i];

  CLI::App app{"multi-fidelity Gaussian process classification toolkit"};
  app.set_config("--config", "", "config file (INI/TOML, one section per subcommand); flags override");
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset with a ground-truth sidecar");
  Index g_dim = 2, g_nlow = 300, g_nhigh = 100, g_ntest = 200;
  double g_noise = 0.2, g_sl = 0.0, g_sigl = -1.0, g_sd = 0.0, g_sigd = -1.0;
  std::uint64_t g_seed = 0;
  std::string g_out = "dataset";
  bool g_bernoulli = false;
  gen->add_option("--dim", g_dim, "input dimension")->check(CLI::PositiveNumber);
  gen->add_option("--n-low", g_nlow, "low-fidelity points");
  gen->add_option("--n-high", g_nhigh, "high-fidelity points");
  gen->add_option("--n-test", g_ntest, "held-out test points");
  gen->add_option("--noise", g_noise, "target fidelity disagreement in [0, 0.5)")
      ->check(CLI::Range(0.0, 0.4999999));
  gen->add_option("--seed", g_seed, "master seed");
  gen->add_option("--out", g_out, "output path stem");
  gen->add_option("--s-l", g_sl, "log-amplitude of the low-fidelity kernel");
  gen->add_option("--sigma-l", g_sigl, "length-scale of the low-fidelity kernel (default 0.25*sqrt(dim))");
  gen->add_option("--s-d", g_sd, "log-amplitude of the residual kernel");
  gen->add_option("--sigma-d", g_sigd, "length-scale of the residual kernel (default 0.25*sqrt(dim))");
  gen->add_flag("--bernoulli-labels", g_bernoulli, "draw labels ~ Bernoulli(sigma(f)) instead of 1[f>0]");

  // train
  auto* tr = app.add_subcommand("train", "tune hyperparameters and fit a multi-fidelity model");
  std::string t_data, t_out = "model.json", t_report;
  OptConfig t_opt;
  tr->add_option("--data", t_data, "training dataset csv")->required();
  tr->add_option("--out", t_out, "model output path");
  tr->add_option("--report", t_report, "training report path (default <out>.report.json)");
  tr->add_option("--restarts", t_opt.restarts, "optimizer restarts");
  tr->add_option("--max-steps", t_opt.max_steps, "max ascent steps per restart");
  tr->add_option("--grad-tol", t_opt.grad_tol, "ascent gradient tolerance");
  tr->add_option("--step-tol", t_opt.step_tol, "ascent step tolerance");
  tr->add_option("--seed", t_opt.seed, "master seed");
  tr->add_option("--tol", t_opt.fit.tol, "Newton gradient tolerance");
  tr->add_option("--max-newton-iters", t_opt.fit.max_iters, "Newton iteration cap");
  tr->add_option("--jitter-rel", t_opt.fit.jitter_rel, "initial relative jitter");
  tr->add_option("--jobs", t_opt.jobs, "concurrent restarts");

  // predict
  auto* pr = app.add_subcommand("predict", "score points with a trained model");
  std::string p_model, p_data, p_out = "predictions.csv";
  pr->add_option("--model", p_model, "model file")->required();
  pr->add_option("--data", p_data, "points to score (dataset csv; labels ignored)")->required();
  pr->add_option("--out", p_out, "predictions output csv");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "run the benchmark protocol over datasets and methods");
  std::vector<std::string> e_datasets, e_scores;
  std::string e_methods = "mf-gpc,sf-gpc,c-sf-gpc";
  std::string e_out = "results.csv", e_profile, e_thresholds = "0.5:1.0:51";
  BenchmarkProtocol e_protocol;
  ev->add_option("--dataset", e_datasets, "dataset as id=train.csv[:test.csv] (repeatable)")->required();
  ev->add_option("--methods", e_methods, "comma-separated methods");
  ev->add_option("--scores", e_scores, "external score file as name=path (repeatable)");
  ev->add_option("--n-high", e_protocol.n_high, "high-fidelity training points per run");
  ev->add_option("--lf-ratio", e_protocol.lf_ratio, "low-fidelity multiple of n-high");
  ev->add_option("--runs", e_protocol.runs, "runs per dataset");
  ev->add_option("--seed", e_protocol.seed, "master seed");
  ev->add_option("--restarts", e_protocol.opt.restarts, "optimizer restarts");
  ev->add_option("--max-steps", e_protocol.opt.max_steps, "optimizer steps per restart");
  ev->add_option("--jobs", e_protocol.jobs, "parallel (dataset x run) tasks");
  ev->add_option("--out", e_out, "results table");
  ev->add_option("--profile-out", e_profile, "AUC profile output csv");
  ev->add_option("--thresholds", e_thresholds, "profile threshold grid lo:hi:count");

  // budget
  auto* bu = app.add_subcommand("budget", "budget-allocation sweep on generated pools");
  Index b_dim = 2, b_pool_low = 900, b_pool_high = 120, b_pool_test = 250;
  std::string b_noises = "0.0,0.2,0.3,0.4", b_shares = "0:1:5", b_fractions = "0.125,0.25,0.5";
  int b_runs = 3, b_jobs = 1;
  std::uint64_t b_seed = 0;
  double b_budget = 100.0;
  std::string b_out = "budget.csv";
  OptConfig b_opt = BenchmarkProtocol::desk_opt();
  bu->add_option("--dim", b_dim, "input dimension");
  bu->add_option("--noises", b_noises, "noise levels (comma list)");
  bu->add_option("--hf-shares", b_shares, "high-fidelity budget shares (lo:hi:count or list)");
  bu->add_option("--lf-cost-fractions", b_fractions, "low-fidelity cost fractions");
  bu->add_option("--runs", b_runs, "runs (pool seeds) per cell");
  bu->add_option("--seed", b_seed, "master seed");
  bu->add_option("--budget", b_budget, "budget in high-fidelity units");
  bu->add_option("--pool-low", b_pool_low, "generated low-fidelity pool size");
  bu->add_option("--pool-high", b_pool_high, "generated high-fidelity pool size");
  bu->add_option("--pool-test", b_pool_test, "generated test size");
  bu->add_option("--restarts", b_opt.restarts, "optimizer restarts");
  bu->add_option("--max-steps", b_opt.max_steps, "optimizer steps per restart");
  bu->add_option("--jobs", b_jobs, "parallel (noise x run) tasks");
  bu->add_option("--out", b_out, "output csv");

  // sensitivity
  auto* se = app.add_subcommand("sensitivity", "validation-AUC grid along one hyperparameter axis");
  std::string s_model, s_validation, s_axis = "rho", s_grid, s_grid_s, s_grid_sigma,
                                     s_out = "sensitivity.csv";
  se->add_option("--model", s_model, "tuned model file")->required();
  se->add_option("--validation", s_validation, "validation dataset csv")->required();
  se->add_option("--axis", s_axis, "rho | theta-l | theta-d");
  se->add_option("--grid", s_grid, "rho grid lo:hi:count or comma list");
  se->add_option("--grid-s", s_grid_s, "log-amplitude grid for theta axes");
  se->add_option("--grid-sigma", s_grid_sigma, "length-scale grid for theta axes");
  se->add_option("--out", s_out, "output csv");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "verify analytic derivatives against numeric oracles");
  std::uint64_t gc_seed = 0;
  Index gc_dim = 2, gc_nlow = 9, gc_nhigh = 5;
  int gc_instances = 20;
  double gc_module_threshold = 1e-5, gc_hyper_threshold = 1e-3;
  std::string gc_out;
  gc->add_option("--seed", gc_seed, "master seed");
  gc->add_option("--dim", gc_dim, "input dimension");
  gc->add_option("--n-low", gc_nlow, "low-fidelity points per instance");
  gc->add_option("--n-high", gc_nhigh, "high-fidelity points per instance");
  gc->add_option("--instances", gc_instances, "random instances");
  gc->add_option("--module-threshold", gc_module_threshold, "per-module rel-err threshold");
  gc->add_option("--hyper-threshold", gc_hyper_threshold, "grad_hyper rel-err threshold");
  gc->add_option("--out", gc_out, "machine-readable output json");

  // mcmc-check
  auto* mc = app.add_subcommand("mcmc-check", "compare Laplace predictions against the MCMC oracle");
  std::uint64_t m_seed = 0;
  Index m_dim = 2, m_nlow = 225, m_nhigh = 75, m_ntest = 200;
  double m_noise = 0.2;
  int m_samples = 4000, m_burn = 1000, m_thin = 2, m_restarts = 2, m_max_steps = 25;
  double m_fixed_rho = std::numeric_limits<double>::quiet_NaN(), m_fixed_s = 1.0;
  std::string m_out;
  mc->add_option("--seed", m_seed, "master seed");
  mc->add_option("--dim", m_dim, "input dimension");
  mc->add_option("--n-low", m_nlow, "low-fidelity training points");
  mc->add_option("--n-high", m_nhigh, "high-fidelity training points");
  mc->add_option("--n-test", m_ntest, "test points");
  mc->add_option("--noise", m_noise, "generated noise level")->check(CLI::Range(0.0, 0.4999999));
  mc->add_option("--samples", m_samples, "MCMC samples");
  mc->add_option("--burn-in", m_burn, "burn-in samples");
  mc->add_option("--thin", m_thin, "thinning");
  mc->add_option("--fixed-rho", m_fixed_rho, "skip tuning; use this rho with median length-scales");
  mc->add_option("--fixed-s", m_fixed_s, "log-amplitude used with --fixed-rho");
  mc->add_option("--restarts", m_restarts, "optimizer restarts for the shared hyperparameters");
  mc->add_option("--max-steps", m_max_steps, "optimizer steps per restart");
  mc->add_option("--out", m_out, "machine-readable output json");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_generate(g_dim, g_nlow, g_nhigh, g_ntest, g_noise, g_seed, g_out, g_sl, g_sigl, g_sd,
                          g_sigd, g_bernoulli);
    if (tr->parsed()) return cmd_train(t_data, t_out, t_report, t_opt);
    if (pr->parsed()) return cmd_predict(p_model, p_data, p_out);
    if (ev->parsed())
      return cmd_evaluate(e_datasets, e_methods, e_scores, e_protocol, e_out, e_profile, e_thresholds);
    if (bu->parsed())
      return cmd_budget(b_dim, b_noises, b_shares, b_fractions, b_runs, b_seed, b_budget, b_pool_low,
                        b_pool_high, b_pool_test, b_opt, b_jobs, b_out);
    if (se->parsed())
      return cmd_sensitivity(s_model, s_validation, s_axis, s_grid, s_grid_s, s_grid_sigma, s_out);
    if (gc->parsed())
      return cmd_gradcheck(gc_seed, gc_dim, gc_nlow, gc_nhigh, gc_instances, gc_module_threshold,
                           gc_hyper_threshold, gc_out);
    if (mc->parsed())
      return cmd_mcmc_check(m_seed, m_dim, m_nlow, m_nhigh, m_ntest, m_noise, m_samples, m_burn, m_thin,
                            m_restarts, m_max_steps, m_fixed_rho, m_fixed_s, m_out);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
