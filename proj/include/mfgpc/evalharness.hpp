#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mfgpc/common.hpp"
#include "mfgpc/datagen.hpp"
#include "mfgpc/dataset.hpp"
#include "mfgpc/hyperopt.hpp"
#include "mfgpc/laplace.hpp"
#include "mfgpc/metrics.hpp"
#include "mfgpc/rng.hpp"
#include "mfgpc/single_fidelity.hpp"

namespace mfgpc {

struct RunRecord {
  std::string dataset_id;
  std::string method;
  std::uint64_t seed = 0;  // the per-run subsample seed, shared across methods
  int run_index = 0;
  double roc_auc = 0.0;
  Index n_low = 0;
  Index n_high = 0;
  double noise_level = 0.0;
  double wall_time_sec = 0.0;  // reported separately, never in the numeric outputs
};

struct RunFailure {
  std::string dataset_id;
  std::string method;
  int run_index = 0;
  std::string error;
};

struct BenchmarkDataset {
  std::string id;
  FidelityDataset pool;
  SfDataset test;  // empty -> score on the high-fidelity points left out of training
  double noise_level = 0.0;
};

inline const std::vector<std::string>& registered_methods() {
  static const std::vector<std::string> methods = {"mf-gpc", "sf-gpc", "c-sf-gpc"};
  return methods;
}

struct BenchmarkProtocol {
  Index n_high = 75;
  int lf_ratio = 3;
  int runs = 3;
  std::uint64_t seed = 0;
  OptConfig opt = desk_opt();
  int jobs = 1;

  /// Desk-scale optimizer budget used by the experiment runners.
  static OptConfig desk_opt() {
    OptConfig c;
    c.restarts = 2;
    c.max_steps = 30;
    c.grad_tol = 1e-3;
    c.step_tol = 1e-6;
    c.fit.tol = 1e-8;
    return c;
  }
};

struct BenchmarkResult {
  std::vector<RunRecord> records;
  std::vector<RunFailure> failures;
};

namespace detail {

inline std::uint64_t string_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Class-balanced subsample of n_high HF + n_low LF points; returns the chosen
/// HF indices as well so the remaining ones can serve as a test set.
inline std::pair<FidelityDataset, std::vector<Index>> protocol_subsample(const FidelityDataset& pool,
                                                                         Index n_low, Index n_high,
                                                                         std::uint64_t seed) {
  if (n_high > pool.n_high() || n_low > pool.n_low())
    throw InputError("protocol_subsample: pool smaller than the requested subsample");
  Rng rng(seed);
  auto both = [](const IntVector& y) {
    bool p = false, n = false;
    for (Index i = 0; i < y.size(); ++i) (y[i] == 1 ? p : n) = true;
    return y.size() == 0 || (p && n);
  };
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const auto il = rng.sample_without_replacement(pool.n_low(), n_low);
    const auto ih = rng.sample_without_replacement(pool.n_high(), n_high);
    FidelityDataset sub;
    sub.X_low.resize(n_low, pool.dim());
    sub.y_low.resize(n_low);
    for (Index i = 0; i < n_low; ++i) {
      sub.X_low.row(i) = pool.X_low.row(il[static_cast<std::size_t>(i)]);
      sub.y_low[i] = pool.y_low[il[static_cast<std::size_t>(i)]];
    }
    sub.X_high.resize(n_high, pool.dim());
    sub.y_high.resize(n_high);
    for (Index i = 0; i < n_high; ++i) {
      sub.X_high.row(i) = pool.X_high.row(ih[static_cast<std::size_t>(i)]);
      sub.y_high[i] = pool.y_high[ih[static_cast<std::size_t>(i)]];
    }
    if (both(sub.y_low) && both(sub.y_high)) return {std::move(sub), std::vector<Index>(ih.begin(), ih.end())};
  }
  throw NumericalError("protocol_subsample: no class-balanced subsample in 1000 attempts");
}

inline SfDataset held_out_test(const BenchmarkDataset& dataset, const std::vector<Index>& used_high) {
  if (dataset.test.n() > 0) return dataset.test;
  std::set<Index> used(used_high.begin(), used_high.end());
  std::vector<Index> rest;
  for (Index i = 0; i < dataset.pool.n_high(); ++i)
    if (!used.count(i)) rest.push_back(i);
  SfDataset test;
  test.X.resize(static_cast<Index>(rest.size()), dataset.pool.dim());
  test.y.resize(static_cast<Index>(rest.size()));
  for (std::size_t i = 0; i < rest.size(); ++i) {
    test.X.row(static_cast<Index>(i)) = dataset.pool.X_high.row(rest[i]);
    test.y[static_cast<Index>(i)] = dataset.pool.y_high[rest[i]];
  }
  return test;
}

inline Vector probabilities_of(const std::vector<PredictionScore>& scores) {
  Vector p(static_cast<Index>(scores.size()));
  for (Index i = 0; i < p.size(); ++i) p[i] = scores[static_cast<std::size_t>(i)].probability;
  return p;
}

/// Ranking scores for AUC: latent means. Equivalent to probabilities up to a
/// strictly increasing transform, but immune to sigmoid saturation ties.
inline Vector scores_of(const std::vector<PredictionScore>& scores) {
  Vector p(static_cast<Index>(scores.size()));
  for (Index i = 0; i < p.size(); ++i) p[i] = scores[static_cast<std::size_t>(i)].latent_mean;
  return p;
}

inline double score_method(const std::string& method, const FidelityDataset& sub, const SfDataset& test,
                           const OptConfig& opt) {
  if (method == "mf-gpc") {
    const FittedModel model = optimize(sub, opt);
    return roc_auc(scores_of(predict(model, test.X)), test.y);
  }
  if (method == "sf-gpc") {
    const SfModel model = sf_optimize(high_fidelity_only(sub), opt);
    return roc_auc(scores_of(sf_predict(model, test.X)), test.y);
  }
  if (method == "c-sf-gpc") {
    const SfModel model = sf_optimize(concatenated(sub), opt);
    return roc_auc(scores_of(sf_predict(model, test.X)), test.y);
  }
  std::string known;
  for (const auto& m : registered_methods()) known += (known.empty() ? "" : ", ") + m;
  throw InputError("unknown method '" + method + "'; registered methods: " + known);
}

template <typename Task>
void run_tasks(int jobs, int count, Task&& task) {
  if (jobs <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    int i;
    while ((i = next.fetch_add(1)) < count) task(i);
  };
  std::vector<std::thread> pool;
  const int nthreads = std::min(jobs, count);
  pool.reserve(static_cast<std::size_t>(nthreads));
  for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// The benchmark protocol: per dataset x run, draw n_high HF + lf_ratio*n_high
/// LF training points (class-balanced, seed shared across methods), fit every
/// method, score the held-out high-fidelity test set. Method failures are
/// recorded, not fatal.
inline BenchmarkResult run_benchmark(const std::vector<BenchmarkDataset>& datasets,
                                     const std::vector<std::string>& methods,
                                     const BenchmarkProtocol& protocol) {
  for (const auto& m : methods) {
    if (std::find(registered_methods().begin(), registered_methods().end(), m) ==
        registered_methods().end()) {
      std::string known;
      for (const auto& k : registered_methods()) known += (known.empty() ? "" : ", ") + k;
      throw InputError("run_benchmark: unknown method '" + m + "'; registered methods: " + known);
    }
  }

  const int n_tasks = static_cast<int>(datasets.size()) * protocol.runs;
  std::vector<std::vector<RunRecord>> records(static_cast<std::size_t>(n_tasks));
  std::vector<std::vector<RunFailure>> failures(static_cast<std::size_t>(n_tasks));

  detail::run_tasks(protocol.jobs, n_tasks, [&](int task) {
    const auto& dataset = datasets[static_cast<std::size_t>(task) / static_cast<std::size_t>(protocol.runs)];
    const int run = task % protocol.runs;
    const std::uint64_t sub_seed =
        derive_seed(protocol.seed, detail::string_hash(dataset.id), static_cast<std::uint64_t>(run));
    try {
      const Index n_high = protocol.n_high;
      const Index n_low = static_cast<Index>(protocol.lf_ratio) * n_high;
      auto [sub, used_high] = detail::protocol_subsample(dataset.pool, n_low, n_high, sub_seed);
      const SfDataset test = detail::held_out_test(dataset, used_high);
      OptConfig opt = protocol.opt;
      opt.seed = derive_seed(sub_seed, 0x6f7074ULL);
      for (const auto& method : methods) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
          const double auc = detail::score_method(method, sub, test, opt);
          const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          records[static_cast<std::size_t>(task)].push_back(RunRecord{
              dataset.id, method, sub_seed, run, auc, n_low, n_high, dataset.noise_level, dt});
        } catch (const std::exception& e) {
          failures[static_cast<std::size_t>(task)].push_back(RunFailure{dataset.id, method, run, e.what()});
        }
      }
    } catch (const std::exception& e) {
      for (const auto& method : methods)
        failures[static_cast<std::size_t>(task)].push_back(
            RunFailure{dataset.id, method, run, std::string("subsample: ") + e.what()});
    }
  });

  BenchmarkResult out;
  for (auto& chunk : records)
    for (auto& r : chunk) out.records.push_back(std::move(r));
  for (auto& chunk : failures)
    for (auto& f : chunk) out.failures.push_back(std::move(f));
  return out;
}

// --- budget sweeps -------------------------------------------------------------

struct BudgetCell {
  double noise_level = 0.0;
  double lf_cost_fraction = 1.0;
  double hf_share = 1.0;
  std::string method = "mf-gpc";
  double mean_auc = 0.0;
  double std_error = 0.0;
  int runs_ok = 0;
  std::string note;
};

using PoolGenerator = std::function<BenchmarkDataset(double noise_level, std::uint64_t seed)>;

/// Mean AUC per (noise, lf-cost, hf-share) cell for MF-GPC plus an SF-GPC
/// full-high-fidelity reference per noise level. Pools are generated once per
/// (noise, run) and shared across cells so cells differ only in allocation.
inline std::vector<BudgetCell> budget_sweep(const PoolGenerator& generate,
                                            const std::vector<double>& hf_shares,
                                            const std::vector<double>& lf_cost_fractions,
                                            const std::vector<double>& noise_levels, int runs,
                                            std::uint64_t seed, double budget = 100.0,
                                            const OptConfig& opt_in = BenchmarkProtocol::desk_opt(),
                                            int jobs = 1) {
  struct CellAccum {
    std::vector<double> aucs;
    std::string note;
  };
  // task grid: (noise, run) pairs; each computes every cell on its pool
  const int n_tasks = static_cast<int>(noise_levels.size()) * runs;
  struct TaskResult {
    std::vector<double> cell_aucs;  // indexed by cell, NaN when failed
    std::vector<std::string> notes;
    double reference_auc = std::numeric_limits<double>::quiet_NaN();
  };
  const std::size_t n_cells = hf_shares.size() * lf_cost_fractions.size();
  std::vector<TaskResult> results(static_cast<std::size_t>(n_tasks));

  detail::run_tasks(jobs, n_tasks, [&](int task) {
    const std::size_t noise_idx = static_cast<std::size_t>(task) / static_cast<std::size_t>(runs);
    const int run = task % runs;
    const double noise = noise_levels[noise_idx];
    auto& res = results[static_cast<std::size_t>(task)];
    res.cell_aucs.assign(n_cells, std::numeric_limits<double>::quiet_NaN());
    res.notes.assign(n_cells, "");
    const std::uint64_t pool_seed =
        derive_seed(seed, 0x706f6f6cULL + noise_idx, static_cast<std::uint64_t>(run));
    BenchmarkDataset dataset;
    try {
      dataset = generate(noise, pool_seed);
    } catch (const std::exception& e) {
      for (auto& n : res.notes) n = std::string("pool: ") + e.what();
      return;
    }
    OptConfig opt = opt_in;
    for (std::size_t si = 0; si < hf_shares.size(); ++si) {
      for (std::size_t fi = 0; fi < lf_cost_fractions.size(); ++fi) {
        const std::size_t cell = si * lf_cost_fractions.size() + fi;
        try {
          // the subsample seed must not depend on the cost fraction, so the
          // hf_share=1 column is identical across fractions
          const std::uint64_t sub_seed = derive_seed(pool_seed, 0x73756273ULL + si);
          const FidelityDataset sub =
              budget_subsample(dataset.pool, budget, hf_shares[si], lf_cost_fractions[fi], sub_seed);
          opt.seed = derive_seed(sub_seed, 0x6f7074ULL);
          const FittedModel model = optimize(sub, opt);
          res.cell_aucs[cell] =
              roc_auc(detail::scores_of(predict(model, dataset.test.X)), dataset.test.y);
        } catch (const std::exception& e) {
          res.notes[cell] = e.what();
        }
      }
    }
    try {
      const std::uint64_t sub_seed = derive_seed(pool_seed, 0x72656673ULL);
      const FidelityDataset sub = budget_subsample(dataset.pool, budget, 1.0, 1.0, sub_seed);
      opt.seed = derive_seed(sub_seed, 0x6f7074ULL);
      const SfModel model = sf_optimize(high_fidelity_only(sub), opt);
      res.reference_auc =
          roc_auc(detail::scores_of(sf_predict(model, dataset.test.X)), dataset.test.y);
    } catch (const std::exception&) {
      // reference stays NaN
    }
  });

  std::vector<BudgetCell> cells;
  for (std::size_t ni = 0; ni < noise_levels.size(); ++ni) {
    auto aggregate = [&](auto&& get_auc, double frac, double share, const std::string& method) {
      BudgetCell cell;
      cell.noise_level = noise_levels[ni];
      cell.lf_cost_fraction = frac;
      cell.hf_share = share;
      cell.method = method;
      std::vector<double> vals;
      for (int run = 0; run < runs; ++run) {
        const auto& res = results[ni * static_cast<std::size_t>(runs) + static_cast<std::size_t>(run)];
        const double v = get_auc(res);
        if (std::isfinite(v)) vals.push_back(v);
      }
      cell.runs_ok = static_cast<int>(vals.size());
      if (!vals.empty()) {
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double var = 0.0;
        for (double v : vals) var += (v - mean) * (v - mean);
        cell.mean_auc = mean;
        cell.std_error = vals.size() > 1
                             ? std::sqrt(var / static_cast<double>(vals.size() - 1) /
                                         static_cast<double>(vals.size()))
                             : 0.0;
      } else {
        cell.note = "all runs infeasible";
      }
      return cell;
    };
    for (std::size_t si = 0; si < hf_shares.size(); ++si)
      for (std::size_t fi = 0; fi < lf_cost_fractions.size(); ++fi) {
        const std::size_t cell_idx = si * lf_cost_fractions.size() + fi;
        cells.push_back(aggregate([&](const TaskResult& r) { return r.cell_aucs[cell_idx]; },
                                  lf_cost_fractions[fi], hf_shares[si], "mf-gpc"));
      }
    cells.push_back(
        aggregate([&](const TaskResult& r) { return r.reference_auc; }, 1.0, 1.0, "sf-gpc-full-hf"));
  }
  return cells;
}

// --- sensitivity grids ------------------------------------------------------------

enum class SensitivityAxis { rho, theta_l, theta_d };

inline SensitivityAxis sensitivity_axis_from_string(const std::string& s) {
  if (s == "rho") return SensitivityAxis::rho;
  if (s == "theta-l" || s == "theta_l") return SensitivityAxis::theta_l;
  if (s == "theta-d" || s == "theta_d") return SensitivityAxis::theta_d;
  throw InputError("unknown sensitivity axis '" + s + "'; expected rho, theta-l or theta-d");
}

struct SensitivityPoint {
  double value_a = 0.0;  // rho, or s for the theta axes
  double value_b = 0.0;  // sigma for the theta axes
  double auc = 0.0;
  bool ok = false;
  bool is_tuned = false;
  std::string note;
};

/// Validation AUC along one hyperparameter axis with the others frozen at the
/// tuned values. The mode is refit at every grid point; the tuned entry
/// reproduces the tuned model bit for bit.
inline std::vector<SensitivityPoint> sensitivity_grid(const FittedModel& tuned,
                                                      const SfDataset& validation, SensitivityAxis axis,
                                                      const std::vector<std::array<double, 2>>& grid) {
  std::vector<SensitivityPoint> out;
  out.reserve(grid.size());
  for (const auto& g : grid) {
    SensitivityPoint p;
    p.value_a = g[0];
    p.value_b = g[1];
    Hyperparams hyper = tuned.hyper;
    switch (axis) {
      case SensitivityAxis::rho:
        hyper.rho = g[0];
        p.is_tuned = g[0] == tuned.hyper.rho;
        break;
      case SensitivityAxis::theta_l:
        hyper.theta_l = RbfParams(g[0], g[1]);
        p.is_tuned = g[0] == tuned.hyper.theta_l.s() && g[1] == tuned.hyper.theta_l.sigma();
        break;
      case SensitivityAxis::theta_d:
        hyper.theta_d = RbfParams(g[0], g[1]);
        p.is_tuned = g[0] == tuned.hyper.theta_d.s() && g[1] == tuned.hyper.theta_d.sigma();
        break;
    }
    try {
      const FittedModel refit = fit_mode(tuned.data, hyper, tuned.config);
      p.auc = roc_auc(detail::scores_of(predict(refit, validation.X)), validation.y);
      p.ok = true;
    } catch (const std::exception& e) {
      p.note = e.what();
    }
    out.push_back(std::move(p));
  }
  return out;
}

// --- external score files and result tables ------------------------------------------

/// Score-file rows: dataset_id,point_id,score (header optional). Used to
/// compare published baseline numbers without reimplementing the baselines.
inline std::map<std::string, std::vector<std::pair<Index, double>>> load_external_scores(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("load_external_scores: cannot open " + path);
  std::map<std::string, std::vector<std::pair<Index, double>>> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != 3) throw ParseError("score file: expected dataset_id,point_id,score", line_no);
    if (cells[0] == "dataset_id") continue;  // header
    char* end = nullptr;
    const long pid = std::strtol(cells[1].c_str(), &end, 10);
    if (end == cells[1].c_str() || *end != '\0')
      throw ParseError("score file: bad point_id '" + cells[1] + "'", line_no);
    const double score = std::strtod(cells[2].c_str(), &end);
    if (end == cells[2].c_str() || *end != '\0')
      throw ParseError("score file: bad score '" + cells[2] + "'", line_no);
    out[cells[0]].emplace_back(static_cast<Index>(pid), score);
  }
  return out;
}

inline void write_records_csv(const std::vector<RunRecord>& records, const std::string& path,
                              const std::vector<std::string>& comment_lines) {
  std::ofstream out(path);
  if (!out) throw InputError("write_records_csv: cannot open " + path + " for writing");
  for (const auto& c : comment_lines) out << "# " << c << "\n";
  out << "dataset_id,method,run,subsample_seed,n_low,n_high,noise_level,roc_auc\n";
  for (const auto& r : records)
    out << r.dataset_id << "," << r.method << "," << r.run_index << "," << r.seed << "," << r.n_low << ","
        << r.n_high << "," << format_double(r.noise_level) << "," << format_double(r.roc_auc) << "\n";
}

inline void write_profile_csv(const std::map<std::string, std::vector<double>>& profiles,
                              const std::vector<double>& thresholds, const std::string& path,
                              const std::vector<std::string>& comment_lines) {
  std::ofstream out(path);
  if (!out) throw InputError("write_profile_csv: cannot open " + path + " for writing");
  for (const auto& c : comment_lines) out << "# " << c << "\n";
  out << "threshold";
  for (const auto& [method, curve] : profiles) out << "," << method;
  out << "\n";
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    out << format_double(thresholds[t]);
    for (const auto& [method, curve] : profiles) out << "," << format_double(curve[t]);
    out << "\n";
  }
}

inline void write_budget_csv(const std::vector<BudgetCell>& cells, const std::string& path,
                             const std::vector<std::string>& comment_lines) {
  std::ofstream out(path);
  if (!out) throw InputError("write_budget_csv: cannot open " + path + " for writing");
  for (const auto& c : comment_lines) out << "# " << c << "\n";
  out << "noise_level,lf_cost_fraction,hf_share,method,mean_roc_auc,std_error,runs_ok,note\n";
  for (const auto& c : cells)
    out << format_double(c.noise_level) << "," << format_double(c.lf_cost_fraction) << ","
        << format_double(c.hf_share) << "," << c.method << "," << format_double(c.mean_auc) << ","
        << format_double(c.std_error) << "," << c.runs_ok << "," << c.note << "\n";
}

inline void write_sensitivity_csv(const std::vector<SensitivityPoint>& points, SensitivityAxis axis,
                                  const std::string& path, const std::vector<std::string>& comment_lines) {
  std::ofstream out(path);
  if (!out) throw InputError("write_sensitivity_csv: cannot open " + path + " for writing");
  for (const auto& c : comment_lines) out << "# " << c << "\n";
  out << (axis == SensitivityAxis::rho ? "rho,unused" : "s,sigma") << ",roc_auc,ok,is_tuned,note\n";
  for (const auto& p : points)
    out << format_double(p.value_a) << "," << format_double(p.value_b) << "," << format_double(p.auc) << ","
        << (p.ok ? 1 : 0) << "," << (p.is_tuned ? 1 : 0) << "," << p.note << "\n";
}

}  // namespace mfgpc
