#pragma once

// Direct scalar-loop evaluations of the heatmap metrics, written from the
// formulas rather than from the library code.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "looptrans/tensor.hpp"

namespace looptrans::oracle {

inline std::vector<double> dist(const Tensor& t) {
  double total = 0;
  for (std::size_t i = 0; i < t.size(); ++i) total += t[i] + 1e-12;
  std::vector<double> p;
  for (std::size_t i = 0; i < t.size(); ++i) p.push_back((t[i] + 1e-12) / total);
  return p;
}

inline double kld(const Tensor& pred, const Tensor& gt) {
  const auto p = dist(pred), q = dist(gt);
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += q[i] * (std::log(q[i]) - std::log(p[i]));
  return s;
}

inline double sim(const Tensor& pred, const Tensor& gt) {
  const auto p = dist(pred), q = dist(gt);
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] < q[i] ? p[i] : q[i];
  return s;
}

/// Per-pixel normalization: Σ over fixations of the standardized prediction, divided by H·W.
inline double nss(const Tensor& pred, const BinaryGrid& fix, bool per_fixation = false) {
  const double n = static_cast<double>(pred.size());
  double mean = 0, sq = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) mean += pred[i] / n;
  for (std::size_t i = 0; i < pred.size(); ++i) sq += (pred[i] - mean) * (pred[i] - mean) / n;
  const double sd = std::sqrt(sq);
  double s = 0, nf = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (fix.cells[i]) {
      s += (pred[i] - mean) / sd;
      nf += 1;
    }
  return per_fixation ? s / nf : s / n;
}

/// AUC-Judd by brute force: one ROC point per distinct fixation value.
inline double auc_j(const Tensor& pred, const BinaryGrid& fix) {
  std::set<double, std::greater<>> thresholds;
  double n_on = 0, n_off = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (fix.cells[i]) {
      thresholds.insert(pred[i]);
      n_on += 1;
    } else {
      n_off += 1;
    }
  }
  std::vector<std::pair<double, double>> roc{{0.0, 0.0}};
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (pred[i] >= t) (fix.cells[i] ? tp : fp) += 1;
    roc.emplace_back(fp / n_off, tp / n_on);
  }
  roc.emplace_back(1.0, 1.0);
  double area = 0;
  for (std::size_t i = 1; i < roc.size(); ++i)
    area += (roc[i].first - roc[i - 1].first) * (roc[i].second + roc[i - 1].second) / 2;
  return area;
}

}  // namespace looptrans::oracle
