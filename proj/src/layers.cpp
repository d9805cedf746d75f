#include "looptrans/layers.hpp"

#include <cmath>

namespace looptrans {

Tensor random_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Var bind(Tape& tape, const Tensor& t, bool trainable) { return trainable ? tape.leaf(t) : tape.constant(t); }

CamTrunkParams CamTrunkParams::init(std::size_t c, Rng& rng) {
  CamTrunkParams p;
  p.mlp_w = random_normal({c, c}, std::sqrt(2.0 / static_cast<double>(c)), rng);
  p.mlp_b = Tensor(Shape{c});
  p.conv1_w = random_normal({3, 3, c, c}, std::sqrt(2.0 / static_cast<double>(9 * c)), rng);
  p.conv1_b = Tensor(Shape{c});
  p.conv2_w = random_normal({3, 3, c, c}, std::sqrt(2.0 / static_cast<double>(9 * c)), rng);
  p.conv2_b = Tensor(Shape{c});
  return p;
}

void CamTrunkParams::append_refs(const std::string& prefix, ParamRefs& out) {
  out.emplace_back(prefix + "mlp_w", &mlp_w);
  out.emplace_back(prefix + "mlp_b", &mlp_b);
  out.emplace_back(prefix + "conv1_w", &conv1_w);
  out.emplace_back(prefix + "conv1_b", &conv1_b);
  out.emplace_back(prefix + "conv2_w", &conv2_w);
  out.emplace_back(prefix + "conv2_b", &conv2_b);
}

BoundTrunk BoundTrunk::bind(Tape& tape, const CamTrunkParams& p, bool trainable) {
  using looptrans::bind;
  return {bind(tape, p.mlp_w, trainable),   bind(tape, p.mlp_b, trainable),
          bind(tape, p.conv1_w, trainable), bind(tape, p.conv1_b, trainable),
          bind(tape, p.conv2_w, trainable), bind(tape, p.conv2_b, trainable)};
}

Var BoundTrunk::forward(const Var& features) const {
  auto h = ops::relu(ops::conv1x1(features, mlp_w, &mlp_b));
  h = ops::relu(ops::conv3x3(h, conv1_w, conv1_b));
  return ops::relu(ops::conv3x3(h, conv2_w, conv2_b));
}

void BoundTrunk::append_vars(std::vector<Var>& out) const {
  out.insert(out.end(), {mlp_w, mlp_b, conv1_w, conv1_b, conv2_w, conv2_b});
}

}  // namespace looptrans
