#include "aqa/fusion.hpp"

#include <cmath>

#include "aqa/error.hpp"

namespace aqa {

Tensor similarity(const Tensor& f_x, const Tensor& f_temporal) {
  if (f_x.rank() != 2 || f_temporal.rank() != 2 || f_x.dim(1) != f_temporal.dim(1)) {
    throw ConfigError("similarity: feature dims disagree, " + shape_str(f_x.shape()) + " vs " +
                      shape_str(f_temporal.shape()));
  }
  return matmul_nt(f_x, f_temporal);
}

Tensor enhance(const Tensor& f_x, const Tensor& s) {
  if (s.rank() != 2 || f_x.rank() != 2 || s.dim(0) != f_x.dim(0)) {
    throw DimensionError("enhance: similarity " + shape_str(s.shape()) + " does not match features " +
                         shape_str(f_x.shape()));
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(f_x.dim(1)));
  const Tensor gate = sigmoid(scale(mean(s, 1), inv_sqrt_d));
  return mul_rows(f_x, gate);
}

AttentionFusion::AttentionFusion(ParameterStore& store, int dim, int heads, Rng& rng)
    : block_(store, "fusion.attn_block", dim, heads, 4 * dim, rng) {}

Tensor AttentionFusion::operator()(const Tensor& f_x, const Tensor& f_temporal) const {
  const Tensor joint = block_(concat({f_x, f_temporal}, 0));
  return slice(joint, 0, 0, f_x.dim(0));
}

}  // namespace aqa
