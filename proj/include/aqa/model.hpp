#pragma once

#include <cstdint>
#include <memory>
#include <optional>

#include "aqa/decoder.hpp"
#include "aqa/encoder.hpp"
#include "aqa/fusion.hpp"
#include "aqa/head.hpp"

namespace aqa {

enum class FusionMode { Stm, None, Attention };

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  // Ablation: no temporal decoder and no fusion; the head reads f_x^N.
  bool decoder_enabled = true;
  FusionMode fusion = FusionMode::Stm;

  void validate() const;
};

struct FrameOutput {
  PredMaps maps;
  TokenSeq joint;
  Tensor f_temporal;  // undefined with the decoder disabled
  Tensor q_next;      // undefined with the decoder disabled
};

struct ForwardTrace {
  AttentionTrace encoder_attention;
  DecodeTrace decoder;
};

class AqaModel {
 public:
  AqaModel(const ModelConfig& config, std::uint64_t seed);
  AqaModel(const AqaModel&) = delete;
  AqaModel& operator=(const AqaModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  const SpatialEncoder& encoder() const { return *encoder_; }
  const TemporalDecoder* decoder() const { return decoder_.get(); }
  const CenterHead& head() const { return *head_; }

  // [S×S×3] normalized patch → stride-16 tokens with positional table.
  TokenSeq embed_template(const Tensor& patch) const { return encoder_->embed(patch, TokenOrigin::Template); }
  TokenSeq embed_search(const Tensor& patch) const { return encoder_->embed(patch, TokenOrigin::Search); }

  // One frame of the pipeline at frame index t ≥ 1 of the current window.
  FrameOutput forward(const TokenSeq& template_tokens, const TokenSeq& search_tokens, const QueryWindow& window, int t,
                      ForwardTrace* trace = nullptr) const;

  QueryWindow make_window() const { return QueryWindow(config_.decoder.window); }

 private:
  ModelConfig config_;
  ParameterStore params_;
  std::unique_ptr<SpatialEncoder> encoder_;
  std::unique_ptr<TemporalDecoder> decoder_;
  std::unique_ptr<AttentionFusion> attention_fusion_;
  std::unique_ptr<CenterHead> head_;
};

}  // namespace aqa
