#pragma once

// Parameter containers shared by the CAM-shaped networks.

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "looptrans/autodiff.hpp"

namespace looptrans {

using Rng = std::mt19937_64;

Tensor random_normal(Shape shape, double stddev, Rng& rng);

/// Leaf when trainable, constant otherwise.
Var bind(Tape& tape, const Tensor& t, bool trainable);

/// Named view over the tensors of a parameter set, in a fixed order.
using ParamRefs = std::vector<std::pair<std::string, Tensor*>>;
using ConstParamRefs = std::vector<std::pair<std::string, const Tensor*>>;

/// MLP (per-location C→C linear + ReLU) followed by two 3×3 conv + ReLU layers.
struct CamTrunkParams {
  Tensor mlp_w;    // [C, C]
  Tensor mlp_b;    // [C]
  Tensor conv1_w;  // [3, 3, C, C]
  Tensor conv1_b;  // [C]
  Tensor conv2_w;  // [3, 3, C, C]
  Tensor conv2_b;  // [C]

  /// Fan-in scaled normal weights, zero biases.
  static CamTrunkParams init(std::size_t channels, Rng& rng);
  std::size_t channels() const { return mlp_w.dim(0); }
  void append_refs(const std::string& prefix, ParamRefs& out);
};

struct BoundTrunk {
  Var mlp_w, mlp_b, conv1_w, conv1_b, conv2_w, conv2_b;

  static BoundTrunk bind(Tape& tape, const CamTrunkParams& p, bool trainable);
  Var forward(const Var& features) const;
  void append_vars(std::vector<Var>& out) const;
};

}  // namespace looptrans
