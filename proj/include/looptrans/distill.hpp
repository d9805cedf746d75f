#pragma once

// Ego-to-exo denoising distillation, score-correlation alignment, and the
// one-way alignment baseline.

#include <vector>

#include "looptrans/autodiff.hpp"

namespace looptrans {

/// gap(R(g) ∘ F): mean over H·W of the min-max normalized map times features → [C].
Var masked_pooled_feature(const Var& map, const Var& features);

struct PooledFeatures {
  Var f_exo;
  Var f_pixel;  // teacher; callers pass a detached value
  std::vector<Var> f_noise;
};

struct SimilarityScores {
  double s_pixel = 0.0;
  std::vector<double> s_noise;
  double tau = 1.0;
};

/// log(1 + Σ_m exp((s_noise_m − s_pixel)/τ)) via log-sum-exp; 0 when M = 0.
Var denoise_loss(const PooledFeatures& pf, double tau);
SimilarityScores similarity_scores(const PooledFeatures& pf, double tau);

/// MSE between the two score vectors after centering each and scaling to unit norm.
Var corr_loss(const Var& z_exo, const Var& z_ego);

/// ‖h_exo − h_ego‖² with h = masked_pooled_feature(g, F).
Var one_way_align_loss(const Var& g_exo, const Var& f_exo, const Var& g_ego, const Var& f_ego);

}  // namespace looptrans
