#include "aqa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "aqa/error.hpp"

namespace aqa {

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

std::array<float, 3> random_color(Rng& rng, double lo, double hi) {
  return {static_cast<float>(rng.uniform(lo, hi)), static_cast<float>(rng.uniform(lo, hi)),
          static_cast<float>(rng.uniform(lo, hi))};
}

// Smooth value noise: random colors on a lattice, smoothstep-interpolated.
void add_value_noise(Image& img, Rng& rng, double cell, double amplitude) {
  const int gw = static_cast<int>(std::ceil(img.width / cell)) + 2;
  const int gh = static_cast<int>(std::ceil(img.height / cell)) + 2;
  std::vector<std::array<float, 3>> lattice(static_cast<std::size_t>(gw) * gh);
  for (auto& c : lattice) c = random_color(rng, -amplitude, amplitude);
  for (int y = 0; y < img.height; ++y) {
    const double fy = (y + 0.5) / cell;
    const int iy = static_cast<int>(fy);
    const double ty = smoothstep(fy - iy);
    for (int x = 0; x < img.width; ++x) {
      const double fx = (x + 0.5) / cell;
      const int ix = static_cast<int>(fx);
      const double tx = smoothstep(fx - ix);
      const auto& a = lattice[static_cast<std::size_t>(iy) * gw + ix];
      const auto& b = lattice[static_cast<std::size_t>(iy) * gw + ix + 1];
      const auto& c = lattice[static_cast<std::size_t>(iy + 1) * gw + ix];
      const auto& d = lattice[static_cast<std::size_t>(iy + 1) * gw + ix + 1];
      for (int k = 0; k < 3; ++k) {
        const double top = a[k] + tx * (b[k] - a[k]);
        const double bottom = c[k] + tx * (d[k] - c[k]);
        img.at(x, y, k) += static_cast<float>(top + ty * (bottom - top));
      }
    }
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (canvas < 32) throw ConfigError("synth.canvas: must be at least 32");
  if (length < 2) throw ConfigError("synth.length: must be at least 2");
  if (shapes.empty()) throw ConfigError("synth.shapes: at least one shape required");
  if (!(min_size > 2.0) || max_size < min_size) throw ConfigError("synth.min_size/max_size: need 2 < min ≤ max");
  if (max_size * max_aspect > 0.5 * canvas) throw ConfigError("synth.max_size: object too large for the canvas");
  if (!(max_aspect >= 1.0)) throw ConfigError("synth.max_aspect: must be ≥ 1");
  if (speed_min < 0.0 || speed_max < speed_min) throw ConfigError("synth.speed_min/speed_max: need 0 ≤ min ≤ max");
  if (acceleration < 0.0) throw ConfigError("synth.acceleration: must be non-negative");
  if (scale_drift < 0.0) throw ConfigError("synth.scale_drift: must be non-negative");
  if (occluder_prob < 0.0 || occluder_prob > 1.0) throw ConfigError("synth.occluder_prob: must lie in [0,1]");
  if (occluders < 0) throw ConfigError("synth.occluders: must be non-negative");
  if (!(texture_scale > 0.0)) throw ConfigError("synth.texture_scale: must be positive");
  if (distractors < 0) throw ConfigError("synth.distractors: must be non-negative");
  if (noise < 0.0) throw ConfigError("synth.noise: must be non-negative");
}

SynthSequence::SynthSequence(const SynthConfig& cfg, std::uint64_t seed, std::string name)
    : cfg_(cfg), seed_(seed), name_(std::move(name)) {
  cfg_.validate();
  Rng rng(seed);

  background_ = Image(cfg_.canvas, cfg_.canvas, 0.5f);
  add_value_noise(background_, rng, cfg_.texture_scale, 0.25);
  add_value_noise(background_, rng, 0.5 * cfg_.texture_scale, 0.1);

  const auto make_look = [&] {
    Appearance a;
    a.shape = cfg_.shapes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(cfg_.shapes.size()) - 1))];
    a.base = random_color(rng, 0.0, 1.0);
    for (int k = 0; k < 3; ++k) a.accent[k] = a.base[k] > 0.5f ? a.base[k] - 0.5f : a.base[k] + 0.5f;
    a.pattern = rng.uniform_int(0, 3);
    a.frequency = rng.uniform(1.5, 3.5);
    return a;
  };
  target_ = make_look();
  track_ = simulate(rng);
  for (int i = 0; i < cfg_.distractors; ++i) {
    Mover m;
    m.look = make_look();
    m.states = simulate(rng);
    distractors_.push_back(std::move(m));
  }
  if (cfg_.occluders > 0 && rng.bernoulli(cfg_.occluder_prob)) {
    // A strip crosses the target mid-sequence and never covers it during
    // the first frames, where the tracker is initialized.
    constexpr int kClearFrames = 3;
    const auto clear_of_start = [&](const Occluder& o) {
      for (int t = 0; t < std::min(kClearFrames, cfg_.length); ++t) {
        const PixelBox& b = track_[static_cast<std::size_t>(t)].box;
        const double lo = o.vertical ? b.x : b.y, hi = lo + (o.vertical ? b.w : b.h);
        const double center = o.start + o.speed * t;
        if (center + 0.5 * o.width > lo - 3.0 && center - 0.5 * o.width < hi + 3.0) return false;
      }
      return true;
    };
    for (int i = 0; i < cfg_.occluders; ++i) {
      Occluder o;
      o.vertical = rng.bernoulli(0.5);
      o.width = rng.uniform(0.4, 0.9) * cfg_.max_size;
      o.color = random_color(rng, 0.15, 0.85);
      for (int attempt = 0; attempt < 16; ++attempt) {
        const int t_cross = rng.uniform_int(static_cast<int>(0.2 * cfg_.length), static_cast<int>(0.8 * cfg_.length));
        const PixelBox& at = track_[static_cast<std::size_t>(t_cross)].box;
        o.speed = rng.uniform(0.5, 2.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
        o.start = (o.vertical ? at.cx() : at.cy()) - o.speed * t_cross;
        if (clear_of_start(o)) {
          occluders_.push_back(o);
          break;
        }
      }
    }
  }
}

std::vector<SynthSequence::State> SynthSequence::simulate(Rng& rng) const {
  const double canvas = cfg_.canvas;
  double size = rng.uniform(cfg_.min_size, cfg_.max_size);
  const double aspect = std::exp(rng.uniform(-1.0, 1.0) * std::log(cfg_.max_aspect));
  const double sqrt_aspect = std::sqrt(aspect);
  const double margin = 0.5 * cfg_.max_size * cfg_.max_aspect + 2.0;
  double cx = rng.uniform(margin, canvas - margin);
  double cy = rng.uniform(margin, canvas - margin);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double speed = rng.uniform(cfg_.speed_min, cfg_.speed_max);
  double vx = speed * std::cos(angle), vy = speed * std::sin(angle);
  const double speed_cap = std::max(cfg_.speed_max, 1e-9) * 1.5;

  std::vector<State> out;
  out.reserve(static_cast<std::size_t>(cfg_.length));
  for (int t = 0; t < cfg_.length; ++t) {
    if (t > 0) {
      if (cfg_.acceleration > 0.0) {
        vx += rng.normal(0.0, cfg_.acceleration);
        vy += rng.normal(0.0, cfg_.acceleration);
        const double s = std::hypot(vx, vy);
        if (s > speed_cap) {
          vx *= speed_cap / s;
          vy *= speed_cap / s;
        }
      }
      if (cfg_.scale_drift > 0.0) {
        size = std::clamp(size * std::exp(rng.normal(0.0, cfg_.scale_drift)), 0.75 * cfg_.min_size,
                          1.25 * cfg_.max_size);
      }
      cx += vx;
      cy += vy;
    }
    const double w = size * sqrt_aspect, h = size / sqrt_aspect;
    if (cx - 0.5 * w < 0.0 || cx + 0.5 * w > canvas) {
      vx = -vx;
      cx = std::clamp(cx, 0.5 * w, canvas - 0.5 * w);
    }
    if (cy - 0.5 * h < 0.0 || cy + 0.5 * h > canvas) {
      vy = -vy;
      cy = std::clamp(cy, 0.5 * h, canvas - 0.5 * h);
    }
    out.push_back({PixelBox::from_center({cx, cy, w, h})});
  }
  return out;
}

void SynthSequence::paint(Image& img, const Appearance& look, const PixelBox& b) const {
  const int x1 = std::max(0, static_cast<int>(std::floor(b.x)));
  const int y1 = std::max(0, static_cast<int>(std::floor(b.y)));
  const int x2 = std::min(img.width - 1, static_cast<int>(std::ceil(b.x + b.w)));
  const int y2 = std::min(img.height - 1, static_cast<int>(std::ceil(b.y + b.h)));
  const double tau = 2.0 * std::numbers::pi;
  for (int y = y1; y <= y2; ++y) {
    const double v = (y + 0.5 - b.y) / b.h;
    if (v < 0.0 || v > 1.0) continue;
    for (int x = x1; x <= x2; ++x) {
      const double u = (x + 0.5 - b.x) / b.w;
      if (u < 0.0 || u > 1.0) continue;
      if (look.shape == Shape2D::Ellipse && (2 * u - 1) * (2 * u - 1) + (2 * v - 1) * (2 * v - 1) > 1.0) continue;
      double mix = 0.0;
      switch (look.pattern) {
        case 0:
          mix = std::sin(tau * look.frequency * u) > 0.0 ? 1.0 : 0.0;
          break;
        case 1:
          mix = (static_cast<int>(look.frequency * u) + static_cast<int>(look.frequency * v)) % 2;
          break;
        case 2:
          mix = std::min(1.0, 2.0 * std::hypot(u - 0.5, v - 0.5));
          break;
        default:
          mix = std::sin(tau * look.frequency * (u + v) * 0.5) > 0.0 ? 1.0 : 0.0;
          break;
      }
      for (int k = 0; k < 3; ++k) {
        img.at(x, y, k) = static_cast<float>(look.base[k] + mix * (look.accent[k] - look.base[k]));
      }
    }
  }
}

Image SynthSequence::frame(int index) const {
  if (index < 0 || index >= cfg_.length) throw ContractError("synth frame index out of range: " + std::to_string(index));
  Image img = background_;
  const auto t = static_cast<std::size_t>(index);
  for (const Mover& m : distractors_) paint(img, m.look, m.states[t].box);
  paint(img, target_, track_[t].box);
  for (const Occluder& o : occluders_) {
    const double center = o.start + o.speed * index;
    const int lo = std::max(0, static_cast<int>(std::floor(center - 0.5 * o.width)));
    const int hi = std::min(cfg_.canvas - 1, static_cast<int>(std::ceil(center + 0.5 * o.width)));
    for (int a = lo; a <= hi; ++a) {
      for (int b = 0; b < cfg_.canvas; ++b) {
        const int x = o.vertical ? a : b, y = o.vertical ? b : a;
        const float shade = (b / 4) % 2 ? 0.9f : 1.0f;
        for (int k = 0; k < 3; ++k) img.at(x, y, k) = o.color[k] * shade;
      }
    }
  }
  if (cfg_.noise > 0.0) {
    Rng rng(mix_seed(seed_, 1000003ULL + t));
    for (float& v : img.data) v += static_cast<float>(rng.normal(0.0, cfg_.noise));
  }
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

std::vector<std::shared_ptr<const Sequence>> synth_dataset(const SynthConfig& cfg, int count, std::uint64_t stream) {
  std::vector<std::shared_ptr<const Sequence>> out;
  const std::uint64_t base = mix_seed(cfg.seed, stream);
  char name[48];
  for (int i = 0; i < count; ++i) {
    std::snprintf(name, sizeof name, "synth%llu_%04d", static_cast<unsigned long long>(stream), i + 1);
    out.push_back(std::make_shared<SynthSequence>(cfg, mix_seed(base, static_cast<std::uint64_t>(i)), name));
  }
  return out;
}

std::unique_ptr<SynthSequence> synth_generate(const SynthConfig& cfg, int length) {
  if (length < 2) throw ContractError("synth_generate: length must be at least 2");
  SynthConfig c = cfg;
  c.length = length;
  return std::make_unique<SynthSequence>(c, cfg.seed, "synth");
}

}  // namespace aqa
