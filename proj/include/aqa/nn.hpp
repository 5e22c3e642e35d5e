#pragma once

#include <string>
#include <vector>

#include "aqa/random.hpp"
#include "aqa/tensor.hpp"

namespace aqa {

struct Parameter {
  std::string name;
  Tensor tensor;
};

// Ordered registry of model parameters. Registration order is the
// checkpoint order and the optimizer order.
class ParameterStore {
 public:
  // Registers `init` as a trainable leaf; names must be unique.
  Tensor add(const std::string& name, Tensor init);

  const std::vector<Parameter>& all() const { return params_; }
  const Parameter* find(const std::string& name) const;

  std::size_t tensor_count() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
};

Tensor xavier_uniform(Rng& rng, int fan_in, int fan_out, const Shape& shape);
Tensor normal_init(Rng& rng, double stddev, const Shape& shape);

// y = x·W + b with W stored [in×out].
struct Linear {
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, int in, int out, Rng& rng, bool with_bias = true);

  Tensor operator()(const Tensor& x) const;

  Tensor weight;
  Tensor bias;  // undefined when constructed without bias
};

struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, int dim);

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

  Tensor gamma;
  Tensor beta;
};

// Two-layer position-wise network with GELU.
struct FeedForward {
  FeedForward() = default;
  FeedForward(ParameterStore& store, const std::string& name, int dim, int hidden, Rng& rng);

  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

  Linear fc1;
  Linear fc2;
};

// Collects detached attention probability matrices (one per head per call).
struct AttentionTrace {
  std::vector<Tensor> probabilities;
};

// MultiHead(Q,K,V) = Concat(H_1..H_h)·W_O with H_i = softmax(QW_iᵠ (KW_iᴷ)ᵀ/√d_k) VW_iⱽ.
// The per-head projections are the column blocks of the [D×D] matrices
// wq, wk, wv; no biases.
struct MultiHeadAttention {
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, int dim, int heads, Rng& rng);

  Tensor operator()(const Tensor& q, const Tensor& k, const Tensor& v, AttentionTrace* trace = nullptr) const;

  int dim = 0;
  int heads = 0;
  Linear wq, wk, wv, wo;
};

}  // namespace aqa
