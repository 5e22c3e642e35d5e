#include "aqa/encoder.hpp"

#include "aqa/error.hpp"

namespace aqa {

void EncoderConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); };
  if (template_size <= 0 || template_size % kStride != 0) fail("encoder.template_size", "must be a positive multiple of 16");
  if (search_size <= 0 || search_size % kStride != 0) fail("encoder.search_size", "must be a positive multiple of 16");
  if (dim <= 0 || dim % 4 != 0) fail("encoder.dim", "must be a positive multiple of 4");
  if (heads <= 0 || dim % heads != 0) fail("encoder.heads", "must divide encoder.dim");
  if (layers < 0) fail("encoder.layers", "must be non-negative");
  if (mlp_blocks < 0 || mlp_blocks % 2 != 0) fail("encoder.mlp_blocks", "must be an even non-negative count");
  if (mlp_ratio <= 0) fail("encoder.mlp_ratio", "must be positive");
}

TokenSeq TokenSeq::search_part() const {
  if (origin != TokenOrigin::Joint) return *this;
  TokenSeq out;
  out.tokens = slice(tokens, 0, search_offset, count());
  out.origin = TokenOrigin::Search;
  out.grid = grid;
  return out;
}

TokenSeq TokenSeq::template_part() const {
  if (origin != TokenOrigin::Joint) throw ContractError("template_part: sequence is not joint");
  TokenSeq out;
  out.tokens = slice(tokens, 0, 0, search_offset);
  out.origin = TokenOrigin::Template;
  out.grid = template_grid;
  return out;
}

ResidualMlp::ResidualMlp(ParameterStore& store, const std::string& name, int dim, int hidden, Rng& rng)
    : norm(store, name + ".norm", dim), ffn(store, name + ".mlp", dim, hidden, rng) {}

TransformerBlock::TransformerBlock(ParameterStore& store, const std::string& name, int dim, int heads, int hidden,
                                   Rng& rng)
    : norm1(store, name + ".norm1", dim),
      attn(store, name + ".attn", dim, heads, rng),
      norm2(store, name + ".norm2", dim),
      ffn(store, name + ".mlp", dim, hidden, rng) {}

Tensor TransformerBlock::operator()(const Tensor& x, AttentionTrace* trace) const {
  const Tensor h = norm1(x);
  const Tensor y = add(x, attn(h, h, h, trace));
  return add(y, ffn(norm2(y)));
}

SpatialEncoder::SpatialEncoder(ParameterStore& store, const EncoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int d = config_.dim;
  const int stem_in = EncoderConfig::kStemPatch * EncoderConfig::kStemPatch * 3;
  stem_ = Linear(store, "encoder.stem", stem_in, d / 4, rng);
  const int per_stage = config_.mlp_blocks / 2;
  for (int s = 0; s < EncoderConfig::kMerges; ++s) {
    const int c = (d / 4) << s;
    std::vector<ResidualMlp> stage;
    for (int b = 0; b < per_stage; ++b) {
      stage.emplace_back(store, "encoder.stage" + std::to_string(s) + ".block" + std::to_string(b), c,
                         c * config_.mlp_ratio, rng);
    }
    stages_.push_back(std::move(stage));
    const std::string merge = "encoder.merge" + std::to_string(s);
    merge_norms_.emplace_back(store, merge + ".norm", 4 * c);
    merge_proj_.emplace_back(store, merge + ".proj", 4 * c, 2 * c, rng, false);
  }
  pos_template_ = store.add("encoder.pos_template", normal_init(rng, 0.02, {config_.template_tokens(), d}));
  pos_search_ = store.add("encoder.pos_search", normal_init(rng, 0.02, {config_.search_tokens(), d}));
  for (int l = 0; l < config_.layers; ++l) {
    blocks_.emplace_back(store, "encoder.block" + std::to_string(l), d, config_.heads, d * config_.mlp_ratio, rng);
  }
  final_norm_ = LayerNorm(store, "encoder.norm", d);
}

TokenSeq SpatialEncoder::patch_embed(const Tensor& image, TokenOrigin origin) const {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ConfigError("patch_embed: expected [H×W×3] image, got " + shape_str(image.shape()));
  }
  const int p = EncoderConfig::kStemPatch;
  if (image.dim(0) % p != 0 || image.dim(1) % p != 0) {
    throw ConfigError("patch_embed: image " + shape_str(image.shape()) + " is not divisible by 4");
  }
  TokenSeq out;
  out.tokens = stem_(patchify(image, p));
  out.origin = origin;
  out.grid = {image.dim(0) / p, image.dim(1) / p};
  return out;
}

TokenSeq SpatialEncoder::mlp_stage(const TokenSeq& tokens, int stage) const {
  if (stage < 0 || stage >= EncoderConfig::kMerges) throw ContractError("mlp_stage: no stage " + std::to_string(stage));
  TokenSeq out = tokens;
  for (const auto& block : stages_[stage]) out.tokens = block(out.tokens);
  return out;
}

TokenSeq SpatialEncoder::patch_merge(const TokenSeq& tokens, int stage) const {
  if (stage < 0 || stage >= EncoderConfig::kMerges) throw ContractError("patch_merge: no stage " + std::to_string(stage));
  if (tokens.grid.h % 2 != 0 || tokens.grid.w % 2 != 0) {
    throw ConfigError("patch_merge: grid " + std::to_string(tokens.grid.h) + "x" + std::to_string(tokens.grid.w) +
                      " has an odd side");
  }
  TokenSeq out = tokens;
  out.tokens = merge_proj_[stage](merge_norms_[stage](space_to_depth2(tokens.tokens, tokens.grid.h, tokens.grid.w)));
  out.grid = {tokens.grid.h / 2, tokens.grid.w / 2};
  return out;
}

TokenSeq SpatialEncoder::embed(const Tensor& image, TokenOrigin origin) const {
  const int expected = origin == TokenOrigin::Template ? config_.template_size : config_.search_size;
  if (image.rank() != 3 || image.dim(0) != expected || image.dim(1) != expected) {
    throw ConfigError("embed: expected " + std::to_string(expected) + "x" + std::to_string(expected) +
                      " image, got " + shape_str(image.shape()));
  }
  TokenSeq t = patch_embed(image, origin);
  for (int s = 0; s < EncoderConfig::kMerges; ++s) t = patch_merge(mlp_stage(t, s), s);
  t.tokens = add(t.tokens, origin == TokenOrigin::Template ? pos_template_ : pos_search_);
  return t;
}

TokenSeq SpatialEncoder::encode(const TokenSeq& template_tokens, const TokenSeq& search_tokens,
                                AttentionTrace* trace) const {
  const int d = config_.dim;
  if (template_tokens.channels() != d || search_tokens.channels() != d) {
    throw ConfigError("encode: token dims " + std::to_string(template_tokens.channels()) + "/" +
                      std::to_string(search_tokens.channels()) + " do not match encoder dim " + std::to_string(d));
  }
  Tensor x = concat({template_tokens.tokens, search_tokens.tokens}, 0);
  for (const auto& block : blocks_) x = block(x, trace);
  TokenSeq out;
  out.tokens = final_norm_(x);
  out.origin = TokenOrigin::Joint;
  out.grid = search_tokens.grid;
  out.template_grid = template_tokens.grid;
  out.search_offset = template_tokens.count();
  return out;
}

}  // namespace aqa
