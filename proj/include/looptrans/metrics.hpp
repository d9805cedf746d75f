#pragma once

// Heatmap evaluation: KLD, SIM, NSS, AUC-J and dataset aggregation.
//
// Heatmaps are non-negative grids of any shape. KLD and SIM normalize both
// maps to distributions after adding 1e-12 to every cell.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "looptrans/tensor.hpp"

namespace looptrans::metrics {

inline constexpr double kDistEps = 1e-12;

struct MetricValue {
  double value = 0.0;
  bool degenerate = false;
};

/// Σ Q log(Q/P), Q = ground truth.
double kld(const Tensor& pred, const Tensor& gt);
/// Σ min(P, Q)
double sim(const Tensor& pred, const Tensor& gt);

enum class NssNormalization {
  PerPixel,     // (1/HW) Σ P̄·M, the default
  PerFixation,  // (1/ΣM) Σ P̄·M, the usual saliency-benchmark variant
};

/// Prediction standardized to zero mean / unit (population) std, averaged over
/// fixations. A flat prediction gives 0 flagged degenerate.
MetricValue nss(const Tensor& pred, const BinaryGrid& fix, NssNormalization norm = NssNormalization::PerPixel);

/// AUC-Judd: thresholds at the distinct prediction values on fixation cells,
/// TPR over fixations vs FPR over the rest, trapezoid area with (0,0) and (1,1)
/// endpoints. No fixations or no non-fixations gives 0.5 flagged degenerate.
MetricValue auc_j(const Tensor& pred, const BinaryGrid& fix);

/// Fixation map from a continuous ground truth: cells ≥ fraction·max.
BinaryGrid binarize(const Tensor& gt, double fraction = 0.1);

enum class AreaBucket { Small, Middle, Big };
const char* bucket_name(AreaBucket b);
/// >10% big, 3–10% middle, <3% small.
AreaBucket area_bucket(const BinaryGrid& fix);

struct EvalItem {
  std::string sample_id;
  std::size_t label = 0;
  Tensor pred;
  Tensor gt;
  std::optional<BinaryGrid> fix;  // derived from gt when absent
};

struct Scores {
  double kld = 0.0;
  double sim = 0.0;
  double nss = 0.0;
  double auc_j = 0.0;
};

struct SampleResult {
  std::string sample_id;
  std::size_t label = 0;
  AreaBucket bucket = AreaBucket::Small;
  Scores scores;
  bool degenerate = false;
};

struct DatasetReport {
  std::vector<SampleResult> samples;
  Scores mean;
  std::map<std::size_t, Scores> by_class;
  std::map<AreaBucket, Scores> by_bucket;
};

struct EvalOptions {
  double binarize_fraction = 0.1;
  NssNormalization nss_norm = NssNormalization::PerPixel;
};

DatasetReport evaluate_dataset(const std::vector<EvalItem>& items, const EvalOptions& opts = {});

/// Comma-separated report: per-sample rows, then mean / class / bucket rows.
std::string format_report(const DatasetReport& r);

}  // namespace looptrans::metrics
