#include "aqa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "aqa/error.hpp"

namespace aqa {

Tensor fd_grad(const std::function<double()>& f, Tensor& param, double h) {
  if (!param.is_leaf()) throw ContractError("fd_grad: parameter must be a leaf tensor");
  if (!(h > 0.0)) throw ContractError("fd_grad: step must be positive");
  NoGradGuard no_grad;
  auto values = param.mutable_values();
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = f();
    values[i] = saved - h;
    const double down = f();
    values[i] = saved;
    out[i] = (up - down) / (2.0 * h);
  }
  return Tensor(param.shape(), std::move(out));
}

GradComparison compare_gradients(std::span<const double> analytic, std::span<const double> numeric) {
  const bool no_analytic = analytic.empty();
  if (!no_analytic && analytic.size() != numeric.size()) {
    throw DimensionError("compare_gradients: " + std::to_string(analytic.size()) + " vs " +
                         std::to_string(numeric.size()) + " elements");
  }
  GradComparison r;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double a = no_analytic ? 0.0 : analytic[i];
    r.max_abs_error = std::max(r.max_abs_error, std::fabs(a - numeric[i]));
    r.scale = std::max({r.scale, std::fabs(a), std::fabs(numeric[i])});
  }
  r.max_rel_error = r.scale > 0.0 ? r.max_abs_error / r.scale : 0.0;
  return r;
}

}  // namespace aqa
