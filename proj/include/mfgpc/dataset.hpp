#pragma once

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mfgpc/common.hpp"

namespace mfgpc {

/// Two-sample training data: low-fidelity (X_L, y_L) and high-fidelity (X_H, y_H).
struct FidelityDataset {
  Matrix X_low;   // n_low x d
  IntVector y_low;
  Matrix X_high;  // n_high x d
  IntVector y_high;

  Index n_low() const { return X_low.rows(); }
  Index n_high() const { return X_high.rows(); }
  Index dim() const { return X_low.rows() > 0 ? X_low.cols() : X_high.cols(); }

  /// Shape and label-domain checks (cheap, always applicable).
  void validate_shapes() const {
    if (X_low.rows() != y_low.size()) throw InputError("dataset: low-fidelity X/y size mismatch");
    if (X_high.rows() != y_high.size()) throw InputError("dataset: high-fidelity X/y size mismatch");
    if (X_low.rows() > 0 && X_high.rows() > 0 && X_low.cols() != X_high.cols())
      throw InputError("dataset: feature dimensionality differs between fidelities");
    for (Index i = 0; i < y_low.size(); ++i)
      if (y_low[i] != 0 && y_low[i] != 1) throw InputError("dataset: low-fidelity label not in {0,1}");
    for (Index i = 0; i < y_high.size(); ++i)
      if (y_high[i] != 0 && y_high[i] != 1) throw InputError("dataset: high-fidelity label not in {0,1}");
  }

  /// Training-time rule: every non-empty fidelity must contain both classes.
  void validate_for_training() const {
    validate_shapes();
    auto both = [](const IntVector& y) {
      bool p = false, n = false;
      for (Index i = 0; i < y.size(); ++i) (y[i] == 1 ? p : n) = true;
      return p && n;
    };
    if (y_low.size() > 0 && !both(y_low))
      throw InputError("dataset: low-fidelity sample has a single class; need at least one label of each class");
    if (y_high.size() > 0 && !both(y_high))
      throw InputError("dataset: high-fidelity sample has a single class; need at least one label of each class");
  }
};

/// Single-fidelity sample for the baseline classifier.
struct SfDataset {
  Matrix X;
  IntVector y;

  Index n() const { return X.rows(); }

  void validate_for_training() const {
    if (X.rows() != y.size()) throw InputError("dataset: X/y size mismatch");
    bool p = false, n = false;
    for (Index i = 0; i < y.size(); ++i) {
      if (y[i] != 0 && y[i] != 1) throw InputError("dataset: label not in {0,1}");
      (y[i] == 1 ? p : n) = true;
    }
    if (y.size() > 0 && !(p && n))
      throw InputError("dataset: sample has a single class; need at least one label of each class");
  }
};

inline SfDataset concatenated(const FidelityDataset& data) {
  SfDataset out;
  const Index d = data.dim();
  out.X.resize(data.n_low() + data.n_high(), d);
  out.y.resize(data.n_low() + data.n_high());
  if (data.n_low() > 0) {
    out.X.topRows(data.n_low()) = data.X_low;
    out.y.head(data.n_low()) = data.y_low;
  }
  if (data.n_high() > 0) {
    out.X.bottomRows(data.n_high()) = data.X_high;
    out.y.tail(data.n_high()) = data.y_high;
  }
  return out;
}

inline SfDataset high_fidelity_only(const FidelityDataset& data) {
  return SfDataset{data.X_high, data.y_high};
}

// --- checksums -------------------------------------------------------------

inline std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffULL;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Order-sensitive checksum over the exact double bits and labels.
inline std::uint64_t dataset_checksum(const FidelityDataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_matrix = [&h](const Matrix& m) {
    h = fnv1a(h, static_cast<std::uint64_t>(m.rows()));
    h = fnv1a(h, static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) h = fnv1a(h, std::bit_cast<std::uint64_t>(m(i, j)));
  };
  auto mix_labels = [&h](const IntVector& y) {
    for (Index i = 0; i < y.size(); ++i) h = fnv1a(h, static_cast<std::uint64_t>(y[i]));
  };
  mix_matrix(data.X_low);
  mix_labels(data.y_low);
  mix_matrix(data.X_high);
  mix_labels(data.y_high);
  return h;
}

// --- delimited-text dataset files -------------------------------------------
//
// Format: optional '#' comment lines, then a header row
//   x1,...,xd,y,fidelity
// with full-precision decimal floats, y in {0,1}, fidelity in {low,high}.

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void save_dataset(const FidelityDataset& data, const std::string& path,
                         const std::vector<std::string>& comment_lines = {}) {
  data.validate_shapes();
  std::ofstream out(path);
  if (!out) throw InputError("save_dataset: cannot open " + path + " for writing");
  for (const auto& line : comment_lines) out << "# " << line << "\n";
  const Index d = data.dim();
  for (Index j = 0; j < d; ++j) out << "x" << (j + 1) << ",";
  out << "y,fidelity\n";
  auto write_rows = [&](const Matrix& X, const IntVector& y, const char* tag) {
    for (Index i = 0; i < X.rows(); ++i) {
      for (Index j = 0; j < d; ++j) out << format_double(X(i, j)) << ",";
      out << y[i] << "," << tag << "\n";
    }
  };
  write_rows(data.X_low, data.y_low, "low");
  write_rows(data.X_high, data.y_high, "high");
  if (!out) throw NumericalError("save_dataset: write failed for " + path);
}

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace detail

inline FidelityDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("load_dataset: cannot open " + path);
  std::string line;
  long line_no = 0;
  // skip comments, find header
  Index d = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto cells = detail::split_csv(line);
    if (cells.size() < 3 || cells[cells.size() - 1] != "fidelity" || cells[cells.size() - 2] != "y")
      throw ParseError("load_dataset: malformed header, expected x1..xd,y,fidelity", line_no);
    d = static_cast<Index>(cells.size()) - 2;
    break;
  }
  if (d < 0) throw ParseError("load_dataset: no header row found", line_no);

  std::vector<std::vector<double>> xs_low, xs_high;
  std::vector<int> y_low, y_high;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto cells = detail::split_csv(line);
    if (static_cast<Index>(cells.size()) != d + 2)
      throw ParseError("load_dataset: row has " + std::to_string(cells.size()) +
                           " fields, expected " + std::to_string(d + 2),
                       line_no);
    std::vector<double> x(static_cast<std::size_t>(d));
    for (Index j = 0; j < d; ++j) {
      const std::string& cell = cells[static_cast<std::size_t>(j)];
      char* end = nullptr;
      x[static_cast<std::size_t>(j)] = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0')
        throw ParseError("load_dataset: bad numeric value '" + cell + "'", line_no);
    }
    const std::string& ycell = cells[static_cast<std::size_t>(d)];
    if (ycell != "0" && ycell != "1")
      throw ParseError("load_dataset: label must be 0 or 1, got '" + ycell + "'", line_no);
    const int y = ycell == "1" ? 1 : 0;
    const std::string& fid = cells[static_cast<std::size_t>(d) + 1];
    if (fid == "low") {
      xs_low.push_back(std::move(x));
      y_low.push_back(y);
    } else if (fid == "high") {
      xs_high.push_back(std::move(x));
      y_high.push_back(y);
    } else {
      throw ParseError("load_dataset: fidelity must be 'low' or 'high', got '" + fid + "'", line_no);
    }
  }

  FidelityDataset out;
  auto fill = [d](const std::vector<std::vector<double>>& rows, const std::vector<int>& ys, Matrix& X,
                  IntVector& y) {
    X.resize(static_cast<Index>(rows.size()), d);
    y.resize(static_cast<Index>(ys.size()));
    for (Index i = 0; i < X.rows(); ++i) {
      for (Index j = 0; j < d; ++j) X(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      y[i] = ys[static_cast<std::size_t>(i)];
    }
  };
  fill(xs_low, y_low, out.X_low, out.y_low);
  fill(xs_high, y_high, out.X_high, out.y_high);
  out.validate_shapes();
  return out;
}

/// Convenience for test/validation files: all rows must be high-fidelity.
inline SfDataset load_sf_dataset(const std::string& path) {
  FidelityDataset d = load_dataset(path);
  if (d.n_low() > 0 && d.n_high() > 0)
    throw InputError("load_sf_dataset: file mixes fidelities; expected a single-fidelity file");
  if (d.n_high() > 0) return SfDataset{d.X_high, d.y_high};
  return SfDataset{d.X_low, d.y_low};
}

}  // namespace mfgpc
