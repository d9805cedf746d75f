#include "looptrans/pixel_decoder.hpp"

namespace looptrans {

PixelDecoderParams PixelDecoderParams::init(std::size_t c, std::size_t n, Rng& rng, double head_std) {
  return {CamTrunkParams::init(c, rng), random_normal({c, n}, head_std, rng)};
}

void PixelDecoderParams::append_refs(const std::string& prefix, ParamRefs& out) {
  trunk.append_refs(prefix, out);
  out.emplace_back(prefix + "class_head", &class_head);
}

BoundPixelDecoder BoundPixelDecoder::bind(Tape& tape, const PixelDecoderParams& p, bool trainable) {
  return {BoundTrunk::bind(tape, p.trunk, trainable), looptrans::bind(tape, p.class_head, trainable), &p};
}

void BoundPixelDecoder::append_vars(std::vector<Var>& out) const {
  trunk.append_vars(out);
  out.push_back(class_head);
}

Var pixel_forward(const FeatureVar& f, const BoundPixelDecoder& dec) {
  if (f.view != View::Ego) throw ContractError("pixel_forward: the pixel decoder takes egocentric features only");
  if (f.grid.shape().size() != 3 || f.grid.shape()[2] != dec.trunk.mlp_w.shape()[0])
    throw ShapeError("pixel_forward: features " + shape_str(f.grid.shape()) + " do not match decoder channels");
  return ops::sigmoid(ops::conv1x1(dec.trunk.forward(f.grid), dec.class_head));
}

Tensor pixel_forward(const FeatureMap& f, const PixelDecoderParams& params) {
  Tape tape;
  return pixel_forward(FeatureVar{f.view, tape.constant(f.grid)}, BoundPixelDecoder::bind(tape, params, false)).value();
}

PixelLossType parse_pixel_loss_type(const std::string& s) {
  if (s == "dice+mse" || s == "mse+dice") return PixelLossType::DiceMse;
  if (s == "dice") return PixelLossType::Dice;
  if (s == "mse") return PixelLossType::Mse;
  throw ContractError("unknown pixel loss type '" + s + "' (expected dice+mse, dice or mse)");
}

const char* pixel_loss_type_name(PixelLossType t) {
  switch (t) {
    case PixelLossType::DiceMse: return "dice+mse";
    case PixelLossType::Dice: return "dice";
    case PixelLossType::Mse: return "mse";
  }
  return "?";
}

Var pixel_loss(const Var& p_c, const PseudoMask& mask, PixelLossType type, std::size_t* skipped) {
  auto& tape = *p_c.tape();
  if (!mask.valid) {
    if (skipped) ++*skipped;
    return tape.constant(Tensor::scalar(0.0));
  }
  const auto& s = p_c.shape();
  if (s.size() != 2 || s[0] != mask.mask.height || s[1] != mask.mask.width)
    throw ShapeError("pixel_loss: prediction " + shape_str(s) + " does not match the mask grid");
  Tensor m(s);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = mask.mask.cells[i];
  auto target = tape.constant(std::move(m));

  Var loss;
  if (type != PixelLossType::Dice) {
    auto diff = ops::sub(p_c, target);
    loss = ops::mean(ops::mul(diff, diff));
  }
  if (type != PixelLossType::Mse) {
    auto inter = ops::sum(ops::mul(p_c, target));
    auto denom = ops::add_scalar(ops::add(ops::sum(p_c), ops::sum(target)), 1e-8);
    auto dice = ops::sub(tape.constant(Tensor::scalar(1.0)), ops::div(ops::scale(inter, 2.0), denom));
    loss = loss.valid() ? ops::add(loss, dice) : dice;
  }
  return loss;
}

}  // namespace looptrans
