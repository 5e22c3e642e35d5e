#include "aqa/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "aqa/error.hpp"

namespace aqa {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

}  // namespace detail

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

std::vector<double>& grad_of(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

// Creates the output node and wires the backward closure when recording.
Tensor make(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs,
            std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const Tensor* t : inputs) any = any || t->requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const Tensor* t : inputs) node->parents.push_back(t->node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank2(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}

int normalize_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return a;
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= static_cast<std::size_t>(shape[i]);
  s.extent = static_cast<std::size_t>(shape[axis]);
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= static_cast<std::size_t>(shape[i]);
  return s;
}

template <class F, class D>
Tensor unary(const Tensor& x, F f, D dfdx) {
  require_defined(x, "unary");
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Node* px = x.node().get();
  return make(x.shape(), std::move(out), {&x}, [px, dfdx](Node& self) {
    auto& g = grad_of(*px);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(px->value[i], self.value[i]);
  });
}

template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA dfda, DB dfdb) {
  require_same_shape(a, b, op);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make(a.shape(), std::move(out), {&a, &b}, [pa, pb, dfda, dfdb](Node& self) {
    const std::size_t n = self.grad.size();
    if (pa->requires_grad) {
      auto& g = grad_of(*pa);
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * dfda(pa->value[i], pb->value[i]);
    }
    if (pb->requires_grad) {
      auto& g = grad_of(*pb);
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * dfdb(pa->value[i], pb->value[i]);
    }
  });
}

constexpr double kGeluK = 0.7978845608028654;  // √(2/π)
constexpr double kGeluC = 0.044715;

}  // namespace

// ---------------------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool enabled) { g_grad_enabled = enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor: non-positive extent in shape " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }
Tensor Tensor::ones(const Shape& shape, bool requires_grad) { return full(shape, 1.0, requires_grad); }
Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}
Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}
int Tensor::rank() const { return static_cast<int>(shape().size()); }
int Tensor::dim(int axis) const { return shape()[normalize_axis(axis, rank(), "dim")]; }
std::size_t Tensor::numel() const { return defined() ? node_->value.size() : 0; }

std::span<const double> Tensor::values() const {
  require_defined(*this, "values");
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  require_defined(*this, "mutable_values");
  if (node_->backward) throw ContractError("mutable_values: tensor is part of a recorded graph");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor with shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

double Tensor::value(std::size_t flat_index) const { return values()[flat_index]; }

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool requires_grad) {
  require_defined(*this, "set_requires_grad");
  if (node_->backward) throw ContractError("set_requires_grad: only leaves can change this flag");
  node_->requires_grad = requires_grad;
  return *this;
}

bool Tensor::is_leaf() const { return defined() && !node_->backward; }
bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }
std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return node_->grad;
}
std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  if (node_->backward) throw ContractError("mutable_grad: only leaves expose gradient storage");
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}
void Tensor::zero_grad() {
  if (defined()) node_->grad.clear();
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return Tensor(node_->shape, node_->value, false);
}

void Tensor::backward() const {
  require_defined(*this, "backward");
  if (numel() != 1) throw ContractError("backward: loss must be a scalar, got shape " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Post-order DFS: parents appear before the nodes that consume them.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward) n->grad.assign(n->value.size(), 0.0);
  }
  grad_of(*node_)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make({m, n}, std::move(out), {&a, &b}, [pa, pb, m, k, n](Node& self) {
    ConstMap g(self.grad.data(), m, n);
    if (pa->requires_grad) {
      MutMap(grad_of(*pa).data(), m, k).noalias() += g * ConstMap(pb->value.data(), k, n).transpose();
    }
    if (pb->requires_grad) {
      MutMap(grad_of(*pb).data(), k, n).noalias() += ConstMap(pa->value.data(), m, k).transpose() * g;
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()) + "ᵀ");
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), n, k).transpose();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make({m, n}, std::move(out), {&a, &b}, [pa, pb, m, k, n](Node& self) {
    ConstMap g(self.grad.data(), m, n);
    if (pa->requires_grad) {
      MutMap(grad_of(*pa).data(), m, k).noalias() += g * ConstMap(pb->value.data(), n, k);
    }
    if (pb->requires_grad) {
      MutMap(grad_of(*pb).data(), n, k).noalias() += g.transpose() * ConstMap(pa->value.data(), m, k);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.numel());
  MutMap(out.data(), n, m) = ConstMap(a.values().data(), m, n).transpose();
  Node* pa = a.node().get();
  return make({n, m}, std::move(out), {&a}, [pa, m, n](Node& self) {
    MutMap(grad_of(*pa).data(), m, n) += ConstMap(self.grad.data(), n, m).transpose();
  });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  require_defined(a, "reshape");
  for (int d : shape) {
    if (d <= 0) throw DimensionError("reshape: non-positive extent in " + shape_str(shape));
  }
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  Node* pa = a.node().get();
  return make(shape, std::move(out), {&a}, [pa](Node& self) {
    auto& g = grad_of(*pa);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

// Ties route the gradient to the first argument.
Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; }, [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; }, [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_bias");
  require_defined(bias, "add_bias");
  const std::size_t d = bias.numel();
  if (x.rank() < 1 || static_cast<std::size_t>(x.dim(-1)) != d) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                         shape_str(x.shape()));
  }
  const auto xv = x.values();
  const auto bv = bias.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + bv[i % d];
  Node* px = x.node().get();
  Node* pb = bias.node().get();
  return make(x.shape(), std::move(out), {&x, &bias}, [px, pb, d](Node& self) {
    if (px->requires_grad) {
      auto& g = grad_of(*px);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = grad_of(*pb);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
    }
  });
}

Tensor mul_rows(const Tensor& x, const Tensor& gate) {
  require_defined(x, "mul_rows");
  require_defined(gate, "mul_rows");
  if (x.rank() < 1 || gate.numel() != static_cast<std::size_t>(x.dim(0))) {
    throw DimensionError("mul_rows: gate " + shape_str(gate.shape()) + " does not match leading axis of " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = gate.numel();
  const std::size_t width = x.numel() / rows;
  const auto xv = x.values();
  const auto gv = gate.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = xv[r * width + c] * gv[r];
  }
  Node* px = x.node().get();
  Node* pg = gate.node().get();
  return make(x.shape(), std::move(out), {&x, &gate}, [px, pg, rows, width](Node& self) {
    if (px->requires_grad) {
      auto& g = grad_of(*px);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < width; ++c) g[r * width + c] += self.grad[r * width + c] * pg->value[r];
      }
    }
    if (pg->requires_grad) {
      auto& g = grad_of(*pg);
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < width; ++c) acc += self.grad[r * width + c] * px->value[r * width + c];
        g[r] += acc;
      }
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluK * (x + kGeluC * x * x * x))); }

Tensor gelu(const Tensor& x) {
  return unary(x, gelu_scalar, [](double v, double) {
    const double t = std::tanh(kGeluK * (v + kGeluC * v * v * v));
    return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluK * (1.0 + 3.0 * kGeluC * v * v);
  });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  const auto xv = x.values();
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  Node* px = x.node().get();
  return make({1}, {s}, {&x}, [px](Node& self) {
    auto& g = grad_of(*px);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum(const Tensor& x, int axis) {
  require_defined(x, "sum");
  const int ax = normalize_axis(axis, x.rank(), "sum");
  const AxisSplit s = split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = 1;
  const auto xv = x.values();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.extent + e) * s.inner + i];
    }
  }
  Node* px = x.node().get();
  return make(out_shape, std::move(out), {&x}, [px, s](Node& self) {
    auto& g = grad_of(*px);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t e = 0; e < s.extent; ++e) {
        for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.extent + e) * s.inner + i] += self.grad[o * s.inner + i];
      }
    }
  });
}

Tensor mean(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "mean");
  return scale(sum(x, ax), 1.0 / static_cast<double>(x.dim(ax)));
}

Tensor softmax(const Tensor& x, int axis) {
  require_defined(x, "softmax");
  const int ax = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_axis(x.shape(), ax);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = xv[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, xv[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(xv[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
    }
  }
  Node* px = x.node().get();
  return make(x.shape(), std::move(out), {&x}, [px, s](Node& self) {
    auto& g = grad_of(*px);
    const auto& y = self.value;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += self.grad[base + e * s.inner] * y[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t k = base + e * s.inner;
          g[k] += y[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  const std::size_t d = static_cast<std::size_t>(x.dim(-1));
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> out(xv.size());
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mu) * inv;
      (*xhat)[r * d + c] = h;
      out[r * d + c] = h * gv[c] + bv[c];
    }
  }
  Node* px = x.node().get();
  Node* pg = gamma.node().get();
  Node* pb = beta.node().get();
  return make(x.shape(), std::move(out), {&x, &gamma, &beta}, [px, pg, pb, xhat, rstd, rows, d](Node& self) {
    const auto& dy = self.grad;
    if (pg->requires_grad) {
      auto& g = grad_of(*pg);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) g[c] += dy[r * d + c] * (*xhat)[r * d + c];
      }
    }
    if (pb->requires_grad) {
      auto& g = grad_of(*pb);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) g[c] += dy[r * d + c];
      }
    }
    if (px->requires_grad) {
      auto& g = grad_of(*px);
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double dh = dy[r * d + c] * pg->value[c];
          m1 += dh;
          m2 += dh * (*xhat)[r * d + c];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        for (std::size_t c = 0; c < d; ++c) {
          const double dh = dy[r * d + c] * pg->value[c];
          g[r * d + c] += (*rstd)[r] * (dh - m1 - (*xhat)[r * d + c] * m2);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const int rank = parts.front().rank();
  const int ax = normalize_axis(axis, rank, "concat");
  Shape out_shape = parts.front().shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (static_cast<int>(probe.size()) != rank) {
      throw DimensionError("concat: rank mismatch " + shape_str(parts.front().shape()) + " vs " + shape_str(probe));
    }
    for (int i = 0; i < rank; ++i) {
      if (i != ax && probe[i] != parts.front().shape()[i]) {
        throw DimensionError("concat: shape mismatch " + shape_str(parts.front().shape()) + " vs " +
                             shape_str(probe) + " along axis " + std::to_string(ax));
      }
    }
    out_shape[ax] += probe[ax];
  }
  const AxisSplit whole = split_axis(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t ext = static_cast<std::size_t>(p.shape()[ax]);
    const auto pv = p.values();
    for (std::size_t o = 0; o < whole.outer; ++o) {
      std::copy_n(pv.data() + o * ext * whole.inner, ext * whole.inner,
                  out.data() + (o * whole.extent + offset) * whole.inner);
    }
    offset += ext;
  }

  auto node = std::make_shared<Node>();
  node->shape = out_shape;
  node->value = std::move(out);
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (g_grad_enabled && any) {
    node->requires_grad = true;
    std::vector<Node*> raw;
    std::vector<std::size_t> exts;
    for (const auto& p : parts) {
      node->parents.push_back(p.node());
      raw.push_back(p.node().get());
      exts.push_back(static_cast<std::size_t>(p.shape()[ax]));
    }
    node->backward = [raw, exts, offsets, whole](Node& self) {
      for (std::size_t k = 0; k < raw.size(); ++k) {
        if (!raw[k]->requires_grad) continue;
        auto& g = grad_of(*raw[k]);
        const std::size_t n = exts[k] * whole.inner;
        for (std::size_t o = 0; o < whole.outer; ++o) {
          const double* src = self.grad.data() + (o * whole.extent + offsets[k]) * whole.inner;
          double* dst = g.data() + o * n;
          for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
        }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor slice(const Tensor& x, int axis, int begin, int end) {
  require_defined(x, "slice");
  const int ax = normalize_axis(axis, x.rank(), "slice");
  const int extent = x.shape()[ax];
  if (begin < 0 || end > extent || begin >= end) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for axis of extent " + std::to_string(extent) + " in " + shape_str(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = end - begin;
  const std::size_t n = static_cast<std::size_t>(end - begin) * s.inner;
  const auto xv = x.values();
  std::vector<double> out(s.outer * n);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + (o * s.extent + begin) * s.inner, n, out.data() + o * n);
  }
  Node* px = x.node().get();
  return make(out_shape, std::move(out), {&x}, [px, s, n, begin](Node& self) {
    auto& g = grad_of(*px);
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = g.data() + (o * s.extent + begin) * s.inner;
      const double* src = self.grad.data() + o * n;
      for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
    }
  });
}

Tensor gather(const Tensor& x, const std::vector<std::size_t>& flat_indices) {
  require_defined(x, "gather");
  if (flat_indices.empty()) throw DimensionError("gather: empty index list");
  const auto xv = x.values();
  std::vector<double> out(flat_indices.size());
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    if (flat_indices[i] >= xv.size()) {
      throw DimensionError("gather: index " + std::to_string(flat_indices[i]) + " out of range for " +
                           shape_str(x.shape()));
    }
    out[i] = xv[flat_indices[i]];
  }
  Node* px = x.node().get();
  return make({static_cast<int>(flat_indices.size())}, std::move(out), {&x}, [px, flat_indices](Node& self) {
    auto& g = grad_of(*px);
    for (std::size_t i = 0; i < flat_indices.size(); ++i) g[flat_indices[i]] += self.grad[i];
  });
}

Tensor im2col3x3(const Tensor& x, int h, int w) {
  require_rank2(x, "im2col3x3");
  if (x.dim(0) != h * w) {
    throw DimensionError("im2col3x3: " + shape_str(x.shape()) + " is not a " + std::to_string(h) + "x" +
                         std::to_string(w) + " token grid");
  }
  const int c = x.dim(1);
  const auto xv = x.values();
  const std::size_t width = 9 * static_cast<std::size_t>(c);
  std::vector<double> out(static_cast<std::size_t>(h) * w * width, 0.0);
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      double* dst = out.data() + (static_cast<std::size_t>(r) * w + col) * width;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx, dst += c) {
          const int rr = r + dy, cc = col + dx;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          std::copy_n(xv.data() + (static_cast<std::size_t>(rr) * w + cc) * c, c, dst);
        }
      }
    }
  }
  Node* px = x.node().get();
  return make({h * w, 9 * c}, std::move(out), {&x}, [px, h, w, c, width](Node& self) {
    auto& g = grad_of(*px);
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        const double* src = self.grad.data() + (static_cast<std::size_t>(r) * w + col) * width;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx, src += c) {
            const int rr = r + dy, cc = col + dx;
            if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
            double* dst = g.data() + (static_cast<std::size_t>(rr) * w + cc) * c;
            for (int k = 0; k < c; ++k) dst[k] += src[k];
          }
        }
      }
    }
  });
}

Tensor space_to_depth2(const Tensor& x, int h, int w) {
  require_rank2(x, "space_to_depth2");
  if (x.dim(0) != h * w) {
    throw DimensionError("space_to_depth2: " + shape_str(x.shape()) + " is not a " + std::to_string(h) + "x" +
                         std::to_string(w) + " token grid");
  }
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("space_to_depth2: grid " + std::to_string(h) + "x" + std::to_string(w) + " is not even");
  }
  const int c = x.dim(1);
  const int h2 = h / 2, w2 = w / 2;
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  // Maps each output element to its source so backward is a scatter.
  auto source = std::make_shared<std::vector<std::size_t>>(xv.size());
  std::size_t k = 0;
  for (int r = 0; r < h2; ++r) {
    for (int col = 0; col < w2; ++col) {
      for (int q = 0; q < 4; ++q) {
        const int rr = 2 * r + q / 2, cc = 2 * col + q % 2;
        const std::size_t base = (static_cast<std::size_t>(rr) * w + cc) * c;
        for (int ch = 0; ch < c; ++ch, ++k) {
          (*source)[k] = base + ch;
          out[k] = xv[base + ch];
        }
      }
    }
  }
  Node* px = x.node().get();
  return make({h2 * w2, 4 * c}, std::move(out), {&x}, [px, source](Node& self) {
    auto& g = grad_of(*px);
    for (std::size_t i = 0; i < source->size(); ++i) g[(*source)[i]] += self.grad[i];
  });
}

Tensor patchify(const Tensor& image, int patch) {
  require_defined(image, "patchify");
  if (image.rank() != 3) throw DimensionError("patchify: expected [H×W×C], got " + shape_str(image.shape()));
  const int H = image.dim(0), W = image.dim(1), C = image.dim(2);
  if (patch <= 0 || H % patch != 0 || W % patch != 0) {
    throw ConfigError("patchify: image " + std::to_string(H) + "x" + std::to_string(W) +
                      " is not divisible by patch size " + std::to_string(patch));
  }
  const int gh = H / patch, gw = W / patch;
  const auto xv = image.values();
  std::vector<double> out(xv.size());
  auto source = std::make_shared<std::vector<std::size_t>>(xv.size());
  std::size_t k = 0;
  for (int pr = 0; pr < gh; ++pr) {
    for (int pc = 0; pc < gw; ++pc) {
      for (int dy = 0; dy < patch; ++dy) {
        for (int dx = 0; dx < patch; ++dx) {
          const std::size_t base = (static_cast<std::size_t>(pr * patch + dy) * W + (pc * patch + dx)) * C;
          for (int ch = 0; ch < C; ++ch, ++k) {
            (*source)[k] = base + ch;
            out[k] = xv[base + ch];
          }
        }
      }
    }
  }
  Node* px = image.node().get();
  return make({gh * gw, patch * patch * C}, std::move(out), {&image}, [px, source](Node& self) {
    auto& g = grad_of(*px);
    for (std::size_t i = 0; i < source->size(); ++i) g[(*source)[i]] += self.grad[i];
  });
}

}  // namespace aqa
