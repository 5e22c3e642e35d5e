#pragma once

#include <vector>

#include "aqa/encoder.hpp"
#include "aqa/nn.hpp"

namespace aqa {

struct DecoderConfig {
  int layers = 2;
  int dim = 64;  // always equal to the encoder dim
  int heads = 4;
  int ffn_dim = 128;
  int window = 4;  // m: total queries visible at a frame, history plus current
  // Ablation: replace temporal attention with self-attention over the window.
  bool self_attention = false;

  void validate() const;
  bool operator==(const DecoderConfig&) const = default;
};

// Sliding history of propagated target queries, oldest first. Holds at most
// m−1 entries so that history plus the current query never exceeds m.
class QueryWindow {
 public:
  explicit QueryWindow(int m);

  int capacity() const { return m_; }
  const std::vector<Tensor>& history() const { return history_; }
  // Appends a [1×D] query, evicting the oldest when full. The stored
  // tensor is the same node that was passed in.
  void push(const Tensor& query);
  void clear() { history_.clear(); }

 private:
  int m_;
  std::vector<Tensor> history_;
};

// Q_all at frame t (t ≥ 1): the last min(t, m)−1 history entries followed by
// q_cur, so Q_cur is always the final row.
Tensor assemble_window(const QueryWindow& window, int t, const Tensor& q_cur);

struct DecodeResult {
  Tensor window;      // assembled Q_all fed to the decoder
  Tensor f_temporal;  // [min(t,m)×D] updated window
  Tensor q_next;      // detached updated Q_cur row
};

struct DecodeTrace {
  AttentionTrace attention;
  std::vector<Tensor> windows;  // assembled Q_all per decode call
};

class TemporalDecoder {
 public:
  TemporalDecoder(ParameterStore& store, const DecoderConfig& config, Rng& rng);

  const DecoderConfig& config() const { return config_; }
  const Tensor& init_query() const { return init_query_; }

  // Only Q_cur (the last row of q_all) queries; every window row is a key
  // and value. Returns the updated [1×D] Q_cur row.
  Tensor temporal_attention(int layer, const Tensor& q_cur, const Tensor& q_all, AttentionTrace* trace = nullptr) const;
  // TA → cross attention over f_spatial → FFN, each pre-norm residual.
  Tensor layer_forward(int layer, const Tensor& q_all, const TokenSeq& f_spatial, AttentionTrace* trace = nullptr) const;
  DecodeResult decode(const QueryWindow& window, int t, const TokenSeq& f_spatial, DecodeTrace* trace = nullptr) const;

 private:
  struct Layer {
    LayerNorm ta_norm;
    MultiHeadAttention ta;
    LayerNorm cross_norm;
    MultiHeadAttention cross;
    LayerNorm ffn_norm;
    FeedForward ffn;
  };

  DecoderConfig config_;
  Tensor init_query_;
  Linear input_proj_;
  std::vector<Layer> layers_;
};

}  // namespace aqa
