#include "aqa/model.hpp"

#include "aqa/error.hpp"

namespace aqa {

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (decoder.dim != encoder.dim) throw ConfigError("decoder dim must equal encoder.dim");
  if (!decoder_enabled && fusion == FusionMode::Attention) {
    throw ConfigError("ablation.stm_as_attention requires the decoder");
  }
}

AqaModel::AqaModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.decoder.dim = config_.encoder.dim;
  config_.validate();
  Rng rng(seed);
  encoder_ = std::make_unique<SpatialEncoder>(params_, config_.encoder, rng);
  if (config_.decoder_enabled) {
    decoder_ = std::make_unique<TemporalDecoder>(params_, config_.decoder, rng);
    if (config_.fusion == FusionMode::Attention) {
      attention_fusion_ = std::make_unique<AttentionFusion>(params_, config_.encoder.dim, config_.encoder.heads, rng);
    }
  }
  head_ = std::make_unique<CenterHead>(params_, config_.encoder.dim, rng);
}

FrameOutput AqaModel::forward(const TokenSeq& template_tokens, const TokenSeq& search_tokens,
                              const QueryWindow& window, int t, ForwardTrace* trace) const {
  FrameOutput out;
  out.joint = encoder_->encode(template_tokens, search_tokens, trace ? &trace->encoder_attention : nullptr);
  const TokenSeq f_x = out.joint.search_part();
  Tensor features = f_x.tokens;
  if (decoder_) {
    DecodeResult d = decoder_->decode(window, t, out.joint, trace ? &trace->decoder : nullptr);
    out.f_temporal = d.f_temporal;
    out.q_next = d.q_next;
    switch (config_.fusion) {
      case FusionMode::Stm:
        features = stm_fuse(f_x.tokens, d.f_temporal);
        break;
      case FusionMode::Attention:
        features = (*attention_fusion_)(f_x.tokens, d.f_temporal);
        break;
      case FusionMode::None:
        break;
    }
  }
  out.maps = (*head_)(features, f_x.grid);
  return out;
}

}  // namespace aqa
