#include "aqa/training.hpp"

#include <cmath>

#include "aqa/error.hpp"

namespace aqa {

void SamplerConfig::validate() const {
  if (sequences < 1) throw ConfigError("sampler.sequences: must be at least 1");
  if (pairs < 1) throw ConfigError("sampler.pairs: must be at least 1");
  if (gap_min < 1 || gap_max < gap_min) throw ConfigError("sampler.gap_min/gap_max: need 1 ≤ min ≤ max");
  if (!(template_factor > 0.0)) throw ConfigError("sampler.template_factor: must be positive");
  if (!(search_factor > 0.0)) throw ConfigError("sampler.search_factor: must be positive");
  if (center_jitter < 0.0) throw ConfigError("sampler.center_jitter: must be non-negative");
  if (scale_jitter < 0.0) throw ConfigError("sampler.scale_jitter: must be non-negative");
  if (flip_prob < 0.0 || flip_prob > 1.0) throw ConfigError("sampler.flip_prob: must lie in [0,1]");
  if (brightness < 0.0 || brightness >= 1.0) throw ConfigError("sampler.brightness: must lie in [0,1)");
}

void OptimConfig::validate() const {
  if (lr < 0.0) throw ConfigError("train.lr: must be non-negative");
  if (lr_encoder < 0.0) throw ConfigError("train.lr_encoder: must be non-negative");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay: must be non-negative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("train.beta1/beta2: must lie in [0,1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps: must be positive");
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip: must be non-negative");
}

namespace {

PatchSample crop_sample(const Sequence& seq, int frame, double cx, double cy, double side, int out) {
  const Image img = seq.frame(frame);
  Crop crop = crop_square(img, cx, cy, side, out);
  return {std::move(crop.patch), crop.affine.to_patch_box(seq.box(frame), out)};
}

bool positive(const PixelBox& b) { return b.w > 0.0 && b.h > 0.0; }

}  // namespace

std::vector<SequenceSample> sample_batch(const std::vector<std::shared_ptr<const Sequence>>& dataset,
                                         const SamplerConfig& cfg, int template_size, int search_size, Rng& rng) {
  if (dataset.empty()) throw ContractError("sample_batch: empty dataset");
  cfg.validate();
  std::vector<SequenceSample> batch;
  batch.reserve(static_cast<std::size_t>(cfg.sequences));
  constexpr int kMaxAttempts = 1000;
  while (static_cast<int>(batch.size()) < cfg.sequences) {
    int attempts = 0;
    const Sequence* seq = nullptr;
    std::vector<int> gaps;
    int span = 0;
    for (; attempts < kMaxAttempts; ++attempts) {
      seq = dataset[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(dataset.size()) - 1))].get();
      gaps.clear();
      span = 0;
      for (int k = 0; k < cfg.pairs; ++k) {
        gaps.push_back(rng.uniform_int(cfg.gap_min, cfg.gap_max));
        span += gaps.back();
      }
      if (seq->length() > span) break;  // too short: resample with replacement
    }
    if (attempts == kMaxAttempts) {
      throw ContractError("sample_batch: no sequence is long enough for " + std::to_string(cfg.pairs) + " pairs");
    }
    const int start = rng.uniform_int(0, seq->length() - 1 - span);
    if (!positive(seq->box(start))) continue;

    SequenceSample s;
    s.source = seq->name();
    s.frames.push_back(start);
    const PixelBox t = seq->box(start);
    s.templ = crop_sample(*seq, start, t.cx(), t.cy(), cfg.template_factor * std::sqrt(t.w * t.h), template_size);

    int frame = start;
    PixelBox prev = t;
    for (int k = 0; k < cfg.pairs; ++k) {
      frame += gaps[static_cast<std::size_t>(k)];
      const double base = std::sqrt(prev.w * prev.h);
      const double cx = prev.cx() + rng.normal(0.0, 1.0) * cfg.center_jitter * base;
      const double cy = prev.cy() + rng.normal(0.0, 1.0) * cfg.center_jitter * base;
      const double side = cfg.search_factor * base * std::exp(rng.normal(0.0, 1.0) * cfg.scale_jitter);
      s.search.push_back(crop_sample(*seq, frame, cx, cy, side, search_size));
      s.frames.push_back(frame);
      if (positive(seq->box(frame))) prev = seq->box(frame);
    }
    batch.push_back(std::move(s));
  }
  return batch;
}

PatchSample flip_sample(const PatchSample& s) {
  return {flip_horizontal(s.patch), {1.0 - s.gt.cx, s.gt.cy, s.gt.w, s.gt.h}};
}

void augment(SequenceSample& sample, const SamplerConfig& cfg, Rng& rng) {
  if (rng.bernoulli(cfg.flip_prob)) {
    sample.templ = flip_sample(sample.templ);
    for (PatchSample& p : sample.search) p = flip_sample(p);
  }
  const auto jitter = [&](PatchSample& p) {
    p.patch = scale_brightness(p.patch, rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness));
  };
  jitter(sample.templ);
  for (PatchSample& p : sample.search) jitter(p);
}

AdamW::AdamW(ParameterStore& params, const OptimConfig& cfg) : params_(params), cfg_(cfg) {
  cfg_.validate();
  for (const Parameter& p : params_.all()) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
    encoder_group_.push_back(p.name.rfind("encoder.", 0) == 0);
  }
}

void AdamW::step(double lr_scale) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, steps_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, steps_);
  const auto& all = params_.all();
  for (std::size_t k = 0; k < all.size(); ++k) {
    Tensor t = all[k].tensor;
    const auto g = t.grad();
    if (g.empty()) continue;
    const double lr = lr_scale * (encoder_group_[k] ? cfg_.lr_encoder : cfg_.lr);
    auto w = t.mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps) + cfg_.weight_decay * w[i];
      w[i] -= lr * update;
    }
  }
}

double step_decay(int iter, int total, double decay_fraction, double decay_factor) {
  const int at = static_cast<int>(std::lround(decay_fraction * total));
  return iter >= at ? decay_factor : 1.0;
}

double grad_norm(const ParameterStore& params) {
  double s = 0.0;
  for (const Parameter& p : params.all()) {
    for (double g : p.tensor.grad()) s += g * g;
  }
  return std::sqrt(s);
}

void clip_gradients(ParameterStore& params, double max_norm) {
  if (!(max_norm > 0.0)) return;
  const double norm = grad_norm(params);
  if (!(norm > max_norm)) return;
  const double f = max_norm / norm;
  for (const Parameter& p : params.all()) {
    Tensor t = p.tensor;
    if (!t.has_grad()) continue;
    for (double& g : t.mutable_grad()) g *= f;
  }
}

Tensor clip_loss(const AqaModel& model, const SequenceSample& sample, const LossWeights& weights, StepStats* stats,
                 QueryReplay* replay) {
  if (sample.search.empty()) throw ContractError("clip_loss: sample has no search frames");
  const TokenSeq z = model.embed_template(to_tensor(sample.templ.patch));
  QueryWindow window = model.make_window();
  Tensor total;
  StepStats acc;
  for (std::size_t k = 0; k < sample.search.size(); ++k) {
    const TokenSeq x = model.embed_search(to_tensor(sample.search[k].patch));
    FrameOutput out = model.forward(z, x, window, static_cast<int>(k) + 1);
    const LossTerms terms = total_loss(out.maps, sample.search[k].gt, weights);
    total = total.defined() ? add(total, terms.total) : terms.total;
    acc.cls += terms.cls.item();
    acc.iou += terms.iou.item();
    acc.l1 += terms.l1.item();
    if (!out.q_next.defined()) continue;
    if (replay == nullptr) {
      window.push(out.q_next);
    } else if (replay->record) {
      replay->queries.push_back(out.q_next);
      window.push(out.q_next);
    } else {
      if (k >= replay->queries.size()) throw ContractError("clip_loss: replay has too few queries");
      window.push(replay->queries[k]);
    }
  }
  const double n = static_cast<double>(sample.search.size());
  const Tensor mean_loss = scale(total, 1.0 / n);
  if (stats != nullptr) {
    stats->loss = mean_loss.item();
    stats->cls = acc.cls / n;
    stats->iou = acc.iou / n;
    stats->l1 = acc.l1 / n;
  }
  return mean_loss;
}

StepStats train_step(AqaModel& model, const std::vector<SequenceSample>& batch, AdamW& opt,
                     const LossWeights& weights, double lr_scale) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  ParameterStore& params = model.parameters();
  params.zero_grad();
  // Every sample carries the same number of pairs, so the mean of clip
  // means is the mean over all n·m pairs.
  Tensor total;
  StepStats stats;
  for (const SequenceSample& s : batch) {
    if (s.search.size() != batch.front().search.size()) throw ContractError("train_step: ragged batch");
    StepStats clip;
    const Tensor l = clip_loss(model, s, weights, &clip);
    total = total.defined() ? add(total, l) : l;
    stats.cls += clip.cls;
    stats.iou += clip.iou;
    stats.l1 += clip.l1;
  }
  const double n = static_cast<double>(batch.size());
  const Tensor loss = scale(total, 1.0 / n);
  stats.loss = loss.item();
  stats.cls /= n;
  stats.iou /= n;
  stats.l1 /= n;
  if (!std::isfinite(stats.loss)) {
    throw NumericError("non-finite training loss (cls " + std::to_string(stats.cls) + ", iou " +
                       std::to_string(stats.iou) + ", l1 " + std::to_string(stats.l1) + ")");
  }
  loss.backward();
  stats.grad_norm = grad_norm(params);
  if (!std::isfinite(stats.grad_norm)) throw NumericError("non-finite gradient norm");
  clip_gradients(params, opt.config().grad_clip);
  opt.step(lr_scale);
  return stats;
}

}  // namespace aqa
