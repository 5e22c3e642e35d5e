#include "aqa/nn.hpp"

#include <cmath>

#include "aqa/error.hpp"

namespace aqa {

Tensor ParameterStore::add(const std::string& name, Tensor init) {
  if (find(name) != nullptr) throw ContractError("parameter name registered twice: " + name);
  init.set_requires_grad(true);
  params_.push_back({name, init});
  return init;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

Tensor xavier_uniform(Rng& rng, int fan_in, int fan_out, const Shape& shape) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor(shape, std::move(v));
}

Tensor normal_init(Rng& rng, double stddev, const Shape& shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor(shape, std::move(v));
}

Linear::Linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng, bool with_bias) {
  weight = store.add(name + ".weight", xavier_uniform(rng, in, out, {in, out}));
  if (with_bias) bias = store.add(name + ".bias", Tensor::zeros({out}));
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias) : y;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, int dim) {
  gamma = store.add(name + ".gamma", Tensor::ones({dim}));
  beta = store.add(name + ".beta", Tensor::zeros({dim}));
}

FeedForward::FeedForward(ParameterStore& store, const std::string& name, int dim, int hidden, Rng& rng)
    : fc1(store, name + ".fc1", dim, hidden, rng), fc2(store, name + ".fc2", hidden, dim, rng) {}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& name, int dim_, int heads_,
                                       Rng& rng)
    : dim(dim_), heads(heads_) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("attention " + name + ": dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  wq = Linear(store, name + ".wq", dim, dim, rng, false);
  wk = Linear(store, name + ".wk", dim, dim, rng, false);
  wv = Linear(store, name + ".wv", dim, dim, rng, false);
  wo = Linear(store, name + ".wo", dim, dim, rng, false);
}

Tensor MultiHeadAttention::operator()(const Tensor& q, const Tensor& k, const Tensor& v,
                                      AttentionTrace* trace) const {
  for (const Tensor* t : {&q, &k, &v}) {
    if (t->rank() != 2 || t->dim(1) != dim) {
      throw ConfigError("attention: expected [n×" + std::to_string(dim) + "] input, got " + shape_str(t->shape()));
    }
  }
  if (k.dim(0) != v.dim(0)) {
    throw ConfigError("attention: key/value counts differ, " + shape_str(k.shape()) + " vs " + shape_str(v.shape()));
  }
  const int dk = dim / heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  const Tensor qp = wq(q);
  const Tensor kp = wk(k);
  const Tensor vp = wv(v);
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? qp : slice(qp, 1, h * dk, (h + 1) * dk);
    const Tensor kh = heads == 1 ? kp : slice(kp, 1, h * dk, (h + 1) * dk);
    const Tensor vh = heads == 1 ? vp : slice(vp, 1, h * dk, (h + 1) * dk);
    const Tensor probs = softmax(scale(matmul_nt(qh, kh), inv_sqrt_dk), 1);
    if (trace != nullptr) trace->probabilities.push_back(probs.detach());
    head_out.push_back(matmul(probs, vh));
  }
  return wo(heads == 1 ? head_out.front() : concat(head_out, 1));
}

}  // namespace aqa
