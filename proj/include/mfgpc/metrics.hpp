#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "mfgpc/common.hpp"

namespace mfgpc {

/// Mann-Whitney ROC AUC: the fraction of (positive, negative) pairs where the
/// positive scores higher, ties counted 1/2. Computed through midranks.
inline double roc_auc(const Vector& scores, const IntVector& labels) {
  if (scores.size() != labels.size()) throw InputError("roc_auc: scores/labels size mismatch");
  const Index n = scores.size();
  Index n_pos = 0;
  for (Index i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw InputError("roc_auc: labels must be in {0,1}");
    n_pos += labels[i];
  }
  const Index n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw InputError("roc_auc: undefined metric, both classes must be present");

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  Index i = 0;
  while (i < n) {
    Index j = i;
    while (j < n && scores[order[static_cast<std::size_t>(j)]] == scores[order[static_cast<std::size_t>(i)]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (Index k = i; k < j; ++k)
      if (labels[order[static_cast<std::size_t>(k)]] == 1) rank_sum_pos += midrank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline double pearson_correlation(const Vector& a, const Vector& b) {
  if (a.size() != b.size() || a.size() < 2) throw InputError("pearson_correlation: need two equal-length vectors");
  const double ma = a.mean(), mb = b.mean();
  const Vector da = a.array() - ma, db = b.array() - mb;
  const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  if (denom == 0.0) throw InputError("pearson_correlation: zero variance input");
  return da.dot(db) / denom;
}

/// For each method and threshold t: the share of its runs with AUC above t.
/// Curves are non-increasing in t by construction.
template <typename Records>
std::map<std::string, std::vector<double>> auc_profile(const Records& records,
                                                       const std::vector<double>& thresholds) {
  std::map<std::string, std::vector<double>> counts;
  std::map<std::string, int> totals;
  for (const auto& r : records) {
    auto [it, inserted] = counts.try_emplace(r.method, std::vector<double>(thresholds.size(), 0.0));
    ++totals[r.method];
    for (std::size_t t = 0; t < thresholds.size(); ++t)
      if (r.roc_auc > thresholds[t]) it->second[t] += 1.0;
  }
  for (auto& [method, curve] : counts)
    for (double& v : curve) v /= static_cast<double>(totals[method]);
  return counts;
}

}  // namespace mfgpc
