#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aqa/model.hpp"
#include "aqa/synth.hpp"
#include "aqa/tracker.hpp"
#include "aqa/training.hpp"

namespace aqa {

struct DataConfig {
  int train_sequences = 1024;
  int eval_sequences = 20;
  bool operator==(const DataConfig&) const = default;
};

struct TrainConfig {
  int iterations = 2000;
  double decay_fraction = 0.8;
  OptimConfig optim;
  int checkpoint_every = 0;  // 0: final checkpoint only
  bool operator==(const TrainConfig&) const = default;
};

struct AblationFlags {
  bool decoder_off = false;
  bool ta_as_self_attention = false;
  bool stm_as_attention = false;
  bool stm_off = false;  // decoder kept, its output not fused
  bool operator==(const AblationFlags&) const = default;
};

// One flat key = value file per run; every key has a default.
struct RunConfig {
  std::uint64_t seed = 1;
  EncoderConfig encoder;
  DecoderConfig decoder;
  LossWeights loss;
  SamplerConfig sampler;
  SynthConfig synth;
  DataConfig data;
  TrainConfig train;
  TrackerConfig tracker;
  AblationFlags ablation;

  void validate() const;
  ModelConfig model_config() const;
  bool operator==(const RunConfig&) const = default;
};

std::vector<std::string> config_keys();

// Lines of `key = value`; '#' starts a comment. Unknown or repeated keys,
// malformed values and failed validation raise ConfigError.
RunConfig parse_config_text(const std::string& text, const std::string& source = "<config>");
RunConfig parse_config(const std::filesystem::path& path);
// `key=value` overrides applied on top of an existing config, then validated.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments);

std::string serialize_config(const RunConfig& cfg);
void write_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace aqa
