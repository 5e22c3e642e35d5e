#include "aqa/decoder.hpp"

#include <algorithm>

#include "aqa/error.hpp"

namespace aqa {

void DecoderConfig::validate() const {
  if (layers < 0) throw ConfigError("decoder.layers: must be non-negative");
  if (heads <= 0 || dim % heads != 0) throw ConfigError("decoder.heads: must divide the model dim");
  if (ffn_dim <= 0) throw ConfigError("decoder.ffn_dim: must be positive");
  if (window < 1) throw ConfigError("decoder.window_m: must be at least 1");
}

QueryWindow::QueryWindow(int m) : m_(m) {
  if (m < 1) throw ConfigError("window length must be at least 1, got " + std::to_string(m));
}

void QueryWindow::push(const Tensor& query) {
  if (query.rank() != 2 || query.dim(0) != 1) {
    throw DimensionError("push: query must be [1×D], got " + shape_str(query.shape()));
  }
  if (!history_.empty() && history_.front().shape() != query.shape()) {
    throw DimensionError("push: query " + shape_str(query.shape()) + " does not match history " +
                         shape_str(history_.front().shape()));
  }
  history_.push_back(query);
  const std::size_t limit = static_cast<std::size_t>(m_ - 1);
  if (history_.size() > limit) history_.erase(history_.begin(), history_.end() - static_cast<long>(limit));
}

Tensor assemble_window(const QueryWindow& window, int t, const Tensor& q_cur) {
  if (t < 1) throw ContractError("assemble_window: frame index must be ≥ 1, got " + std::to_string(t));
  const auto& history = window.history();
  const std::size_t allowed = static_cast<std::size_t>(window.capacity() - 1);
  if (history.size() > allowed) {
    throw InvariantError("assemble_window: history holds " + std::to_string(history.size()) +
                         " queries, more than m-1 = " + std::to_string(allowed));
  }
  const std::size_t expected = std::min<std::size_t>(static_cast<std::size_t>(t - 1), allowed);
  if (history.size() != expected) {
    throw InvariantError("assemble_window: frame " + std::to_string(t) + " expects " + std::to_string(expected) +
                         " history queries, found " + std::to_string(history.size()));
  }
  if (history.empty()) return q_cur;
  std::vector<Tensor> rows(history.begin(), history.end());
  rows.push_back(q_cur);
  return concat(rows, 0);
}

TemporalDecoder::TemporalDecoder(ParameterStore& store, const DecoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int d = config_.dim;
  init_query_ = store.add("decoder.init_query", normal_init(rng, 0.02, {1, d}));
  input_proj_ = Linear(store, "decoder.input_proj", d, d, rng);
  for (int l = 0; l < config_.layers; ++l) {
    const std::string name = "decoder.layer" + std::to_string(l);
    layers_.push_back(Layer{LayerNorm(store, name + ".ta_norm", d),
                            MultiHeadAttention(store, name + ".ta", d, config_.heads, rng),
                            LayerNorm(store, name + ".cross_norm", d),
                            MultiHeadAttention(store, name + ".cross", d, config_.heads, rng),
                            LayerNorm(store, name + ".ffn_norm", d),
                            FeedForward(store, name + ".ffn", d, config_.ffn_dim, rng)});
  }
}

Tensor TemporalDecoder::temporal_attention(int layer, const Tensor& q_cur, const Tensor& q_all,
                                           AttentionTrace* trace) const {
  const Layer& L = layers_.at(static_cast<std::size_t>(layer));
  if (q_cur.rank() != 2 || q_cur.dim(0) != 1 || q_all.rank() != 2 || q_all.dim(1) != q_cur.dim(1)) {
    throw DimensionError("temporal_attention: q_cur " + shape_str(q_cur.shape()) + " vs q_all " +
                         shape_str(q_all.shape()));
  }
  const auto cur = q_cur.values();
  const auto all = q_all.values();
  if (!std::equal(cur.begin(), cur.end(), all.end() - static_cast<long>(cur.size()))) {
    throw InvariantError("temporal_attention: q_cur is not the last row of q_all");
  }
  const Tensor keys = L.ta_norm(q_all);
  const Tensor query = slice(keys, 0, q_all.dim(0) - 1, q_all.dim(0));
  return add(q_cur, L.ta(query, keys, keys, trace));
}

Tensor TemporalDecoder::layer_forward(int layer, const Tensor& q_all, const TokenSeq& f_spatial,
                                      AttentionTrace* trace) const {
  const Layer& L = layers_.at(static_cast<std::size_t>(layer));
  const int k = q_all.dim(0);
  Tensor x;
  if (config_.self_attention) {
    const Tensor h = L.ta_norm(q_all);
    x = add(q_all, L.ta(h, h, h, trace));
  } else {
    const Tensor q_cur = slice(q_all, 0, k - 1, k);
    const Tensor updated = temporal_attention(layer, q_cur, q_all, trace);
    x = k == 1 ? updated : concat({slice(q_all, 0, 0, k - 1), updated}, 0);
  }
  x = add(x, L.cross(L.cross_norm(x), f_spatial.tokens, f_spatial.tokens, trace));
  return add(x, L.ffn(L.ffn_norm(x)));
}

DecodeResult TemporalDecoder::decode(const QueryWindow& window, int t, const TokenSeq& f_spatial,
                                     DecodeTrace* trace) const {
  if (f_spatial.channels() != config_.dim) {
    throw ConfigError("decode: spatial dim " + std::to_string(f_spatial.channels()) + " != decoder dim " +
                      std::to_string(config_.dim));
  }
  if (window.capacity() != config_.window) {
    throw ConfigError("decode: window length " + std::to_string(window.capacity()) + " != decoder window_m " +
                      std::to_string(config_.window));
  }
  DecodeResult out;
  out.window = assemble_window(window, t, init_query_);
  if (trace != nullptr) trace->windows.push_back(out.window);
  Tensor x = input_proj_(out.window);
  for (int l = 0; l < config_.layers; ++l) x = layer_forward(l, x, f_spatial, trace ? &trace->attention : nullptr);
  out.f_temporal = x;
  const int k = x.dim(0);
  out.q_next = slice(x, 0, k - 1, k).detach();
  return out;
}

}  // namespace aqa
