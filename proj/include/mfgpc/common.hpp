#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mfgpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntVector = Eigen::VectorXi;
using Index = Eigen::Index;

/// Bad caller input (shapes, labels, flag values).
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

/// Numerical failure (factorization, divergence) with diagnostics in what().
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Newton mode-fitting did not converge; carries the last iterate.
class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, Vector last_iterate, double grad_norm, int iters)
      : NumericalError(what),
        last_iterate(std::move(last_iterate)),
        grad_inf_norm(grad_norm),
        iterations(iters) {}

  Vector last_iterate;
  double grad_inf_norm = 0.0;
  int iterations = 0;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, long line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_number(line) {}
  long line_number = 0;
};

}  // namespace mfgpc
