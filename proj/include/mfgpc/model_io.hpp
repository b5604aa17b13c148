#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "mfgpc/common.hpp"
#include "mfgpc/laplace.hpp"
#include "mfgpc/version.hpp"

namespace mfgpc {

using Json = nlohmann::ordered_json;

namespace detail {

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j, Index cols_hint = 0) {
  const Index rows = static_cast<Index>(j.size());
  Index cols = cols_hint;
  if (rows > 0) cols = static_cast<Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j2 = 0; j2 < cols; ++j2) m(i, j2) = j.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(j2)).get<double>();
  return m;
}

inline Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Vector vector_from_json(const Json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v[i] = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

inline Json labels_to_json(const IntVector& y) {
  Json out = Json::array();
  for (Index i = 0; i < y.size(); ++i) out.push_back(y[i]);
  return out;
}

inline IntVector labels_from_json(const Json& j) {
  IntVector y(static_cast<Index>(j.size()));
  for (Index i = 0; i < y.size(); ++i) y[i] = j.at(static_cast<std::size_t>(i)).get<int>();
  return y;
}

}  // namespace detail

struct OutputMeta {
  std::string command;  // full flag set as invoked
  std::uint64_t seed = 0;
};

/// Model file: hyperparameters, xi_hat, training data + checksum, convergence
/// metadata. Doubles round-trip exactly (shortest-representation dump).
inline Json model_to_json(const FittedModel& model, const OutputMeta& meta, int fidelities = 2) {
  Json j;
  j["format"] = "mfgpc-model";
  j["version"] = kVersion;
  j["fidelities"] = fidelities;
  j["meta"] = {{"command", meta.command}, {"seed", meta.seed}};
  j["hyper"] = {{"rho", model.hyper.rho},
                {"s_l", model.hyper.theta_l.s()},
                {"log_sigma_l", model.hyper.theta_l.log_sigma()},
                {"s_d", model.hyper.theta_d.s()},
                {"log_sigma_d", model.hyper.theta_d.log_sigma()}};
  j["config"] = {{"tol", model.config.tol},
                 {"max_iters", model.config.max_iters},
                 {"max_halvings", model.config.max_halvings},
                 {"jitter_rel", model.config.jitter_rel},
                 {"jitter_max_rel", model.config.jitter_max_rel}};
  j["fit"] = {{"log_marginal", model.log_marginal},
              {"log_det_b", model.log_det_b},
              {"newton_iters", model.newton_iters},
              {"grad_inf_norm", model.grad_inf_norm},
              {"jitter", model.prior.jitter},
              {"converged", model.converged}};
  j["data_checksum"] = dataset_checksum(model.data);
  j["data"] = {{"dim", model.data.dim()},
               {"X_low", detail::matrix_to_json(model.data.X_low)},
               {"y_low", detail::labels_to_json(model.data.y_low)},
               {"X_high", detail::matrix_to_json(model.data.X_high)},
               {"y_high", detail::labels_to_json(model.data.y_high)}};
  j["xi_hat"] = detail::vector_to_json(model.xi_hat.values);
  return j;
}

inline void save_model(const FittedModel& model, const std::string& path, const OutputMeta& meta,
                       int fidelities = 2) {
  std::ofstream out(path);
  if (!out) throw InputError("save_model: cannot open " + path + " for writing");
  out << model_to_json(model, meta, fidelities).dump(2) << "\n";
}

/// Rebuilds the derived quantities (prior factor, alpha, W, marginal) from the
/// stored (data, hyper, xi_hat, config); verifies the data checksum.
inline FittedModel model_from_json(const Json& j) {
  if (j.value("format", "") != std::string("mfgpc-model"))
    throw InputError("model_from_json: not a model file");
  FittedModel model;
  const Json& d = j.at("data");
  const Index dim = d.at("dim").get<Index>();
  model.data.X_low = detail::matrix_from_json(d.at("X_low"), dim);
  model.data.y_low = detail::labels_from_json(d.at("y_low"));
  model.data.X_high = detail::matrix_from_json(d.at("X_high"), dim);
  model.data.y_high = detail::labels_from_json(d.at("y_high"));
  if (j.at("data_checksum").get<std::uint64_t>() != dataset_checksum(model.data))
    throw InputError("model_from_json: training-data checksum mismatch");

  const Json& h = j.at("hyper");
  model.hyper.rho = h.at("rho").get<double>();
  model.hyper.theta_l = RbfParams::from_log(h.at("s_l").get<double>(), h.at("log_sigma_l").get<double>());
  model.hyper.theta_d = RbfParams::from_log(h.at("s_d").get<double>(), h.at("log_sigma_d").get<double>());

  const Json& c = j.at("config");
  model.config.tol = c.at("tol").get<double>();
  model.config.max_iters = c.at("max_iters").get<int>();
  model.config.max_halvings = c.at("max_halvings").get<int>();
  model.config.jitter_rel = c.at("jitter_rel").get<double>();
  model.config.jitter_max_rel = c.at("jitter_max_rel").get<double>();

  model.xi_hat = LatentVector::wrap(detail::vector_from_json(j.at("xi_hat")), model.data);
  model.prior = build_prior(model.data, model.hyper, model.config.jitter_rel, model.config.jitter_max_rel);
  model.alpha = model.prior.solve(model.xi_hat.values);
  model.w_at_mode = curvature(model.xi_hat, model.data, model.hyper.rho);

  const Json& f = j.at("fit");
  model.log_marginal = f.at("log_marginal").get<double>();
  model.log_det_b = f.at("log_det_b").get<double>();
  model.newton_iters = f.at("newton_iters").get<int>();
  model.grad_inf_norm = f.at("grad_inf_norm").get<double>();
  model.converged = f.at("converged").get<bool>();
  return model;
}

inline FittedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("load_model: cannot open " + path);
  Json j;
  in >> j;
  return model_from_json(j);
}

inline int model_fidelities(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("model_fidelities: cannot open " + path);
  Json j;
  in >> j;
  return j.value("fidelities", 2);
}

}  // namespace mfgpc
