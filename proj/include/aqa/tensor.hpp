#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace aqa {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Thread-local switch for graph recording. When disabled, ops produce plain
// leaf tensors and no backward closures are stored.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {
struct Node;
}

/// Dense row-major float64 tensor with reverse-mode differentiation.
///
/// A Tensor is a cheap handle onto a shared graph node. Ops never mutate
/// their inputs; every op returns a fresh node that remembers its parents
/// while GradMode is enabled and some input requires a gradient.
///
/// Gradient semantics: backward() seeds d(loss)/d(loss) = 1 and accumulates
/// into every reachable leaf that requires a gradient. Leaf gradients are
/// never reset implicitly; call zero_grad() between steps. Intermediate
/// gradients are recomputed from scratch on each backward() call, so calling
/// backward() twice on the same graph adds the same contribution twice to
/// the leaves.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor ones(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  // Negative axes count from the back.
  int dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Only legal on leaves; graph nodes are immutable once recorded.
  std::span<double> mutable_values();
  double item() const;
  double value(std::size_t flat_index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool requires_grad);
  bool is_leaf() const;
  bool has_grad() const;
  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  // Leaf gradient storage, allocated as zeros on first use.
  std::span<double> mutable_grad();
  void zero_grad();

  // Value copy that is a fresh leaf without gradient history.
  Tensor detach() const;
  void backward() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal: ops are implemented against the node representation.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// [m×k]·[k×n] → [m×n].
Tensor matmul(const Tensor& a, const Tensor& b);
// [m×k]·[n×k]ᵀ → [m×n].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, const Shape& shape);

// ---------------------------------------------------------------------------
// Elementwise. Binary ops require identical shapes; the only broadcasts are
// the two explicit ones below.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

// x[..., d] + bias[d], bias broadcast over all leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x[n, ...] with slab i multiplied by gate[i]; gate has n elements
// (shape [n] or [n×1]).
Tensor mul_rows(const Tensor& x, const Tensor& gate);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
// tanh approximation: 0.5 x (1 + tanh(√(2/π)(x + 0.044715 x³))).
Tensor gelu(const Tensor& x);
// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);

double gelu_scalar(double x);

// ---------------------------------------------------------------------------
// Reductions. Axis reductions keep the reduced axis with extent 1.
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

inline constexpr double kLayerNormEps = 1e-5;
// Normalizes over the last axis, then gamma ⊙ x̂ + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

// ---------------------------------------------------------------------------
// Structural
// ---------------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis);
// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& x, int axis, int begin, int end);
// Flat-index gather into a 1-D tensor.
Tensor gather(const Tensor& x, const std::vector<std::size_t>& flat_indices);

// Token grids are stored as [h·w × c] with row-major (row, col) token order.

// 3×3 zero-padded neighbourhoods: [h·w × c] → [h·w × 9c], neighbour-major
// (dy, dx) ∈ {-1,0,1}² in row-major order, channels innermost.
Tensor im2col3x3(const Tensor& x, int h, int w);
// 2×2 blocks concatenated as (0,0),(0,1),(1,0),(1,1): [h·w × c] → [(h/2)(w/2) × 4c].
Tensor space_to_depth2(const Tensor& x, int h, int w);
// Non-overlapping p×p patches of an [H×W×C] image: → [(H/p)(W/p) × p·p·C].
Tensor patchify(const Tensor& image, int patch);

}  // namespace aqa
