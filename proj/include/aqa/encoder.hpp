#pragma once

#include <vector>

#include "aqa/nn.hpp"
#include "aqa/tensor.hpp"

namespace aqa {

struct EncoderConfig {
  int template_size = 32;
  int search_size = 64;
  int dim = 64;
  // Residual MLP blocks before the attention layers, split evenly between
  // the stride-4 and stride-8 stages.
  int mlp_blocks = 8;
  int layers = 4;
  int heads = 4;
  int mlp_ratio = 4;

  static constexpr int kMerges = 2;
  static constexpr int kStemPatch = 4;
  static constexpr int kStride = 16;

  void validate() const;
  int template_grid() const { return template_size / kStride; }
  int search_grid() const { return search_size / kStride; }
  int template_tokens() const { return template_grid() * template_grid(); }
  int search_tokens() const { return search_grid() * search_grid(); }
  bool operator==(const EncoderConfig&) const = default;
};

enum class TokenOrigin { Template, Search, Joint };

struct GridSize {
  int h = 0;
  int w = 0;
  int count() const { return h * w; }
  bool operator==(const GridSize&) const = default;
};

// [count×channels] tokens laid out row-major over `grid`. For a joint
// sequence, rows [0, search_offset) are template tokens and the remainder
// are search tokens on `grid`.
struct TokenSeq {
  Tensor tokens;
  TokenOrigin origin = TokenOrigin::Search;
  GridSize grid;
  GridSize template_grid;  // joint only
  int search_offset = 0;   // joint only

  int count() const { return tokens.dim(0); }
  int channels() const { return tokens.dim(1); }
  TokenSeq search_part() const;
  TokenSeq template_part() const;
};

// Residual MLP block: x + fc2(gelu(fc1(LN(x)))).
struct ResidualMlp {
  ResidualMlp() = default;
  ResidualMlp(ParameterStore& store, const std::string& name, int dim, int hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const { return add(x, ffn(norm(x))); }

  LayerNorm norm;
  FeedForward ffn;
};

// Pre-norm transformer block over a token set.
struct TransformerBlock {
  TransformerBlock() = default;
  TransformerBlock(ParameterStore& store, const std::string& name, int dim, int heads, int hidden, Rng& rng);
  Tensor operator()(const Tensor& x, AttentionTrace* trace = nullptr) const;

  LayerNorm norm1;
  MultiHeadAttention attn;
  LayerNorm norm2;
  FeedForward ffn;
};

// Hierarchical joint encoder: 4×4 patch stem at D/4 channels, residual MLP
// stages at stride 4 and 8, two 2×2 merges to stride 16 at D channels, learned
// absolute position tables per image, then joint self-attention over the
// concatenated template and search tokens with a final layer norm.
class SpatialEncoder {
 public:
  SpatialEncoder(ParameterStore& store, const EncoderConfig& config, Rng& rng);

  const EncoderConfig& config() const { return config_; }

  // image: [H×W×3] → stride-4 tokens at D/4 channels.
  TokenSeq patch_embed(const Tensor& image, TokenOrigin origin) const;
  // stage 0 runs at stride 4, stage 1 at stride 8.
  TokenSeq mlp_stage(const TokenSeq& tokens, int stage) const;
  // Halves the grid on each side and doubles the channel count.
  TokenSeq patch_merge(const TokenSeq& tokens, int stage) const;
  // Full stem to stride 16, plus the positional table for `origin`.
  TokenSeq embed(const Tensor& image, TokenOrigin origin) const;
  // f⁰ = Concat(f_z, f_x); N blocks; LN.
  TokenSeq encode(const TokenSeq& template_tokens, const TokenSeq& search_tokens,
                  AttentionTrace* trace = nullptr) const;

  const Tensor& template_pos() const { return pos_template_; }
  const Tensor& search_pos() const { return pos_search_; }

 private:
  EncoderConfig config_;
  Linear stem_;
  std::vector<std::vector<ResidualMlp>> stages_;
  std::vector<LayerNorm> merge_norms_;
  std::vector<Linear> merge_proj_;
  Tensor pos_template_;
  Tensor pos_search_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_norm_;
};

}  // namespace aqa
