#pragma once

// Object-part pseudo-masks: k-means over egocentric patch features, then the
// part with the highest IoU against the thresholded activation map.
// Nothing here touches a gradient tape.

#include <cstdint>
#include <string>
#include <vector>

#include "looptrans/tensor.hpp"

namespace looptrans {

struct KMeansOptions {
  std::size_t restarts = 3;
  std::size_t max_iterations = 100;
};

struct PartSegmentation {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t k = 0;                     // effective cluster count
  std::vector<std::uint32_t> assignments;  // row-major, ids in [0, k)
  Tensor centroids;                      // [k, C], on the unit-normalized features
  double inertia = 0.0;
  std::vector<double> inertia_trace;     // per-iteration inertia of the kept restart
  bool converged = false;
  bool degenerate = false;
  std::vector<std::string> warnings;

  BinaryGrid part(std::size_t id) const;
};

/// k-means++ (seeded) with restarts over the L2-normalized H·W feature vectors.
/// Cluster ids are relabelled in order of first appearance (row-major).
PartSegmentation cluster_parts(const Tensor& features, std::size_t k, std::uint64_t seed,
                               const KMeansOptions& opts = {});

/// 1 where the min-max normalized map is ≥ mu.
BinaryGrid threshold_activation(const Tensor& map, double mu);

double iou(const BinaryGrid& a, const BinaryGrid& b);

struct PseudoMask {
  BinaryGrid mask;
  double source_iou = 0.0;
  std::size_t part_id = 0;
  bool valid = false;
};

/// Part maximizing IoU with `foreground`; ties go to the lowest id. Invalid
/// when the best IoU is 0.
PseudoMask select_pseudo_mask(const PartSegmentation& parts, const BinaryGrid& foreground);

}  // namespace looptrans
