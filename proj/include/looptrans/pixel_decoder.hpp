#pragma once

// Pixel-level affordance decoder: CAM-shaped network with its own parameters
// and a per-pixel sigmoid, supervised by part pseudo-masks.

#include "looptrans/features.hpp"
#include "looptrans/layers.hpp"
#include "looptrans/parts.hpp"

namespace looptrans {

struct PixelDecoderParams {
  CamTrunkParams trunk;
  Tensor class_head;  // [C, N]

  static PixelDecoderParams init(std::size_t channels, std::size_t n_classes, Rng& rng, double head_std = 0.01);
  std::size_t n_classes() const { return class_head.dim(1); }
  void append_refs(const std::string& prefix, ParamRefs& out);
};

struct BoundPixelDecoder {
  BoundTrunk trunk;
  Var class_head;
  const PixelDecoderParams* source = nullptr;

  static BoundPixelDecoder bind(Tape& tape, const PixelDecoderParams& p, bool trainable = true);
  void append_vars(std::vector<Var>& out) const;
};

/// P = σ(decoder logits), [H, W, N]. Egocentric input only.
Var pixel_forward(const FeatureVar& f, const BoundPixelDecoder& dec);
Tensor pixel_forward(const FeatureMap& f, const PixelDecoderParams& params);

enum class PixelLossType { DiceMse, Dice, Mse };

PixelLossType parse_pixel_loss_type(const std::string& s);
const char* pixel_loss_type_name(PixelLossType t);

/// MSE + dice between P_c [H×W] and the pseudo-mask. An invalid mask yields a
/// constant 0 and increments `skipped`.
Var pixel_loss(const Var& p_c, const PseudoMask& mask, PixelLossType type = PixelLossType::DiceMse,
               std::size_t* skipped = nullptr);

}  // namespace looptrans
