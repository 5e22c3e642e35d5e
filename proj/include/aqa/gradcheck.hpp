#pragma once

#include <functional>
#include <span>

#include "aqa/tensor.hpp"

namespace aqa {

// Central-difference estimate of d f / d param, one element at a time.
// `param` must be a leaf; its values are perturbed in place and restored.
Tensor fd_grad(const std::function<double()>& f, Tensor& param, double h = 1e-4);

struct GradComparison {
  double max_abs_error = 0.0;
  // max |analytic − numeric| / max(max |analytic|, max |numeric|); zero when
  // both gradients vanish identically.
  double max_rel_error = 0.0;
  double scale = 0.0;
};

// An empty `analytic` span stands for an all-zero gradient.
GradComparison compare_gradients(std::span<const double> analytic, std::span<const double> numeric);

}  // namespace aqa
