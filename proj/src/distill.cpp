#include "looptrans/distill.hpp"

namespace looptrans {

Var masked_pooled_feature(const Var& map, const Var& features) {
  const auto& ms = map.shape();
  const auto& fs = features.shape();
  if (ms.size() != 2 || fs.size() != 3 || ms[0] != fs[0] || ms[1] != fs[1])
    throw ShapeError("masked_pooled_feature: map " + shape_str(ms) + " does not match features " + shape_str(fs));
  return ops::gap(ops::hadamard(ops::minmax_normalize(map), features));
}

Var denoise_loss(const PooledFeatures& pf, double tau) {
  if (!(tau > 0)) throw ContractError("denoise_loss: temperature must be positive");
  auto& tape = *pf.f_exo.tape();
  if (pf.f_noise.empty()) return tape.constant(Tensor::scalar(0.0));
  const auto s_pixel = ops::cosine_sim(pf.f_pixel, pf.f_exo);
  std::vector<Var> logits{tape.constant(Tensor::scalar(0.0))};
  for (const auto& fn : pf.f_noise)
    logits.push_back(ops::scale(ops::sub(ops::cosine_sim(fn, pf.f_exo), s_pixel), 1.0 / tau));
  return ops::logsumexp(ops::stack(logits));
}

SimilarityScores similarity_scores(const PooledFeatures& pf, double tau) {
  SimilarityScores s;
  s.tau = tau;
  s.s_pixel = ops::cosine_sim(pf.f_pixel, pf.f_exo).item();
  for (const auto& fn : pf.f_noise) s.s_noise.push_back(ops::cosine_sim(fn, pf.f_exo).item());
  return s;
}

namespace {

Var standardize(const Var& z) { return ops::l2_normalize(ops::sub(z, ops::mean(z))); }

}  // namespace

Var corr_loss(const Var& z_exo, const Var& z_ego) {
  if (z_exo.size() != z_ego.size()) throw ShapeError("corr_loss: score vectors differ in length");
  auto d = ops::sub(standardize(z_exo), standardize(z_ego));
  return ops::mean(ops::mul(d, d));
}

Var one_way_align_loss(const Var& g_exo, const Var& f_exo, const Var& g_ego, const Var& f_ego) {
  auto d = ops::sub(masked_pooled_feature(g_exo, f_exo), masked_pooled_feature(g_ego, f_ego));
  return ops::sum(ops::mul(d, d));
}

}  // namespace looptrans
