#pragma once

#include <memory>
#include <string>
#include <vector>

#include "aqa/image.hpp"
#include "aqa/model.hpp"
#include "aqa/sequence.hpp"

namespace aqa {

struct SamplerConfig {
  int sequences = 8;  // n
  int pairs = 4;      // m search frames per sequence, one shared template
  int gap_min = 1;
  int gap_max = 5;
  double template_factor = 2.0;
  double search_factor = 4.0;
  double center_jitter = 0.2;  // std of the crop-center shift, in units of √(w·h)
  double scale_jitter = 0.15;  // std of the log crop-size perturbation
  double flip_prob = 0.5;
  double brightness = 0.2;  // factor drawn uniformly in [1−b, 1+b]

  void validate() const;
  int batch_pairs() const { return sequences * pairs; }
  bool operator==(const SamplerConfig&) const = default;
};

// Patch plus its target box in normalized patch coordinates.
struct PatchSample {
  Image patch;
  BBox gt;
};

struct SequenceSample {
  PatchSample templ;
  std::vector<PatchSample> search;  // temporally ordered
  std::string source;
  std::vector<int> frames;  // template frame, then search frames
};

// Each search crop is centered on the previous sampled frame's target
// (the template frame for the first pair), jittered in position and size.
std::vector<SequenceSample> sample_batch(const std::vector<std::shared_ptr<const Sequence>>& dataset,
                                         const SamplerConfig& cfg, int template_size, int search_size, Rng& rng);

PatchSample flip_sample(const PatchSample& s);
// Clip-level horizontal flip with probability flip_prob, then a brightness
// factor per patch.
void augment(SequenceSample& sample, const SamplerConfig& cfg, Rng& rng);

struct OptimConfig {
  double lr = 1.5e-3;
  double lr_encoder = 1.5e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global-norm clip; 0 disables

  void validate() const;
  bool operator==(const OptimConfig&) const = default;
};

// Decoupled weight decay Adam. Parameters named "encoder.*" use
// lr_encoder, all others lr.
class AdamW {
 public:
  AdamW(ParameterStore& params, const OptimConfig& cfg);

  // Applies one update with both learning rates multiplied by lr_scale.
  void step(double lr_scale = 1.0);
  int steps() const { return steps_; }
  const OptimConfig& config() const { return cfg_; }

 private:
  ParameterStore& params_;
  OptimConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<bool> encoder_group_;
  int steps_ = 0;
};

// 1 before the decay point, decay_factor after; iter is 0-based.
double step_decay(int iter, int total, double decay_fraction, double decay_factor = 0.1);

double grad_norm(const ParameterStore& params);
void clip_gradients(ParameterStore& params, double max_norm);

struct StepStats {
  double loss = 0.0;
  double cls = 0.0;
  double iou = 0.0;
  double l1 = 0.0;
  double grad_norm = 0.0;
};

// Propagated queries of one clip. Recording captures the detached queries
// of a forward pass; replaying feeds them back unchanged, so finite
// differences see the same objective the detached backward pass
// differentiates.
struct QueryReplay {
  std::vector<Tensor> queries;
  bool record = true;
};

// Mean total loss of one clip, frames in order with query propagation.
// Per-term means are written to `stats` when given.
Tensor clip_loss(const AqaModel& model, const SequenceSample& sample, const LossWeights& weights = {},
                 StepStats* stats = nullptr, QueryReplay* replay = nullptr);

// Unrolls every sequence over its search frames with query propagation,
// averages total_loss over all n·m pairs and applies one optimizer step.
// Throws NumericError before touching the parameters if the loss is not
// finite.
StepStats train_step(AqaModel& model, const std::vector<SequenceSample>& batch, AdamW& opt,
                     const LossWeights& weights = {}, double lr_scale = 1.0);

}  // namespace aqa
