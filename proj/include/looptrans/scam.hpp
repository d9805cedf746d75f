#pragma once

// Shared class-activation module. One parameter set serves both views; the
// final 1×1 layer carries N class kernels plus M noise-absorbing kernels whose
// maps are only produced for exocentric inputs.

#include <optional>

#include "looptrans/features.hpp"
#include "looptrans/layers.hpp"

namespace looptrans {

struct ScamParams {
  CamTrunkParams trunk;
  Tensor class_head;  // [C, N]
  Tensor noise_head;  // [C, M]

  /// Trunk fan-in scaled; head kernels N(0, head_std²).
  static ScamParams init(std::size_t channels, std::size_t n_classes, std::size_t n_noise, Rng& rng,
                         double head_std = 0.01);
  std::size_t channels() const { return trunk.channels(); }
  std::size_t n_classes() const { return class_head.dim(1); }
  std::size_t n_noise() const { return noise_head.dim(1); }
  std::size_t head_kernels() const { return n_classes() + n_noise(); }
  void append_refs(const std::string& prefix, ParamRefs& out);
};

struct BoundScam {
  BoundTrunk trunk;
  Var class_head;
  Var noise_head;
  const ScamParams* source = nullptr;

  static BoundScam bind(Tape& tape, const ScamParams& p, bool trainable = true);
  void append_vars(std::vector<Var>& out) const;
};

struct ActivationMaps {
  Var class_maps;                 // G, [H, W, N]
  std::optional<Var> noise_maps;  // G^noise, [H, W, M], exo only (absent when M = 0)
  Var scores;                     // z = gap(G), [N]
  const ScamParams* params = nullptr;
};

ActivationMaps scam_forward(const FeatureVar& f, const BoundScam& scam);

/// Tape-free convenience forward returning plain tensors.
struct ActivationTensors {
  Tensor class_maps;
  std::optional<Tensor> noise_maps;
  Tensor scores;
};
ActivationTensors scam_forward(const FeatureMap& f, const ScamParams& params);

/// −log(σ(z_exo[c]) · σ(z_ego[c])), plus the one-vs-rest negative terms when
/// `negative_terms` is set.
Var joint_cls_loss(const Var& z_exo, const Var& z_ego, std::size_t label, bool negative_terms);
Var single_view_cls_loss(const Var& z, std::size_t label, bool negative_terms);

}  // namespace looptrans
