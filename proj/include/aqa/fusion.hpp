#pragma once

#include "aqa/encoder.hpp"
#include "aqa/nn.hpp"

namespace aqa {

// S = f_x · f_temporalᵀ, [N_x × N_temporal]. No parameters.
Tensor similarity(const Tensor& f_x, const Tensor& f_temporal);

// Per-token gate g_i = sigmoid(mean_j S_ij / √D); row i of f_x scaled by g_i.
// The reduction over the temporal axis is the only place this choice
// lives.
Tensor enhance(const Tensor& f_x, const Tensor& s);

inline Tensor stm_fuse(const Tensor& f_x, const Tensor& f_temporal) {
  return enhance(f_x, similarity(f_x, f_temporal));
}

// Ablation only: one learned transformer block over [f_x; f_temporal],
// keeping the search rows.
class AttentionFusion {
 public:
  AttentionFusion(ParameterStore& store, int dim, int heads, Rng& rng);
  Tensor operator()(const Tensor& f_x, const Tensor& f_temporal) const;

 private:
  TransformerBlock block_;
};

}  // namespace aqa
