#include "looptrans/scam.hpp"

namespace looptrans {

ScamParams ScamParams::init(std::size_t c, std::size_t n, std::size_t m, Rng& rng, double head_std) {
  ScamParams p;
  p.trunk = CamTrunkParams::init(c, rng);
  p.class_head = random_normal({c, n}, head_std, rng);
  p.noise_head = random_normal({c, m}, head_std, rng);
  return p;
}

void ScamParams::append_refs(const std::string& prefix, ParamRefs& out) {
  trunk.append_refs(prefix, out);
  out.emplace_back(prefix + "class_head", &class_head);
  out.emplace_back(prefix + "noise_head", &noise_head);
}

BoundScam BoundScam::bind(Tape& tape, const ScamParams& p, bool trainable) {
  return {BoundTrunk::bind(tape, p.trunk, trainable), looptrans::bind(tape, p.class_head, trainable),
          looptrans::bind(tape, p.noise_head, trainable), &p};
}

void BoundScam::append_vars(std::vector<Var>& out) const {
  trunk.append_vars(out);
  out.insert(out.end(), {class_head, noise_head});
}

ActivationMaps scam_forward(const FeatureVar& f, const BoundScam& scam) {
  const auto& s = f.grid.shape();
  if (s.size() != 3) throw ShapeError("scam_forward: expected H×W×C features, got " + shape_str(s));
  if (s[2] != scam.trunk.mlp_w.shape()[0])
    throw ShapeError("scam_forward: feature channels " + std::to_string(s[2]) + " do not match parameters (" +
                     std::to_string(scam.trunk.mlp_w.shape()[0]) + ")");
  auto h = scam.trunk.forward(f.grid);
  ActivationMaps out;
  out.class_maps = ops::conv1x1(h, scam.class_head);
  if (f.view == View::Exo && scam.noise_head.shape()[1] > 0) out.noise_maps = ops::conv1x1(h, scam.noise_head);
  out.scores = ops::gap(out.class_maps);
  out.params = scam.source;
  return out;
}

ActivationTensors scam_forward(const FeatureMap& f, const ScamParams& params) {
  Tape tape;
  auto maps = scam_forward(FeatureVar{f.view, tape.constant(f.grid)}, BoundScam::bind(tape, params, false));
  ActivationTensors out{maps.class_maps.value(), std::nullopt, maps.scores.value()};
  if (maps.noise_maps) out.noise_maps = maps.noise_maps->value();
  return out;
}

namespace {

void check_label(const Var& z, std::size_t label) {
  if (label >= z.size())
    throw ContractError("label " + std::to_string(label) + " out of range for " + std::to_string(z.size()) +
                        " classes");
}

// −Σ_{i≠label} log(1 − σ(z_i))
Var negative_term(const Var& z, std::size_t label) {
  auto& tape = *z.tape();
  Tensor mask(z.shape(), 1.0);
  mask[label] = 0.0;
  auto log_not = ops::log_sigmoid(ops::neg(z));
  return ops::neg(ops::sum(ops::mul(log_not, tape.constant(mask))));
}

}  // namespace

Var single_view_cls_loss(const Var& z, std::size_t label, bool negative_terms) {
  check_label(z, label);
  auto loss = ops::neg(ops::log_sigmoid(ops::element(z, label)));
  if (negative_terms) loss = ops::add(loss, negative_term(z, label));
  return loss;
}

Var joint_cls_loss(const Var& z_exo, const Var& z_ego, std::size_t label, bool negative_terms) {
  if (z_exo.size() != z_ego.size()) throw ShapeError("joint_cls_loss: score vectors differ in length");
  check_label(z_exo, label);
  // log(σ(a)·σ(b)) = log σ(a) + log σ(b)
  auto loss = ops::neg(
      ops::add(ops::log_sigmoid(ops::element(z_exo, label)), ops::log_sigmoid(ops::element(z_ego, label))));
  if (negative_terms) loss = ops::add(loss, ops::add(negative_term(z_exo, label), negative_term(z_ego, label)));
  return loss;
}

}  // namespace looptrans
