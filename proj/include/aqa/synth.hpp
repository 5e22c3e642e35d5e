#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "aqa/random.hpp"
#include "aqa/sequence.hpp"

namespace aqa {

enum class Shape2D { Rectangle, Ellipse };

struct SynthConfig {
  std::uint64_t seed = 1;
  int canvas = 128;
  int length = 60;
  std::vector<Shape2D> shapes = {Shape2D::Rectangle, Shape2D::Ellipse};
  double min_size = 16.0;  // object side range at frame 1, pixels
  double max_size = 32.0;
  double max_aspect = 1.6;        // w/h drawn log-uniformly in [1/a, a]
  double speed_min = 0.0;         // initial speed, pixels per frame
  double speed_max = 2.5;
  double acceleration = 0.25;     // per-frame velocity perturbation std
  double scale_drift = 0.01;      // per-frame log-size std
  double occluder_prob = 0.3;     // chance that a sequence has occluder strips
  int occluders = 1;
  double texture_scale = 16.0;    // background value-noise cell, pixels
  int distractors = 1;
  double noise = 0.02;            // per-frame pixel noise std

  void validate() const;
  bool operator==(const SynthConfig&) const = default;
};

// One procedurally rendered sequence. Trajectories are fixed at
// construction; frames are rendered on demand and are a pure function of
// (config, seed, frame index).
class SynthSequence : public Sequence {
 public:
  SynthSequence(const SynthConfig& cfg, std::uint64_t seed, std::string name);

  std::string name() const override { return name_; }
  int length() const override { return cfg_.length; }
  Image frame(int index) const override;
  PixelBox box(int index) const override { return track_.at(static_cast<std::size_t>(index)).box; }
  bool occluded_anywhere() const { return !occluders_.empty(); }

 private:
  struct Appearance {
    Shape2D shape = Shape2D::Rectangle;
    std::array<float, 3> base{};
    std::array<float, 3> accent{};
    int pattern = 0;
    double frequency = 2.0;
  };
  struct State {
    PixelBox box;
  };
  struct Mover {
    Appearance look;
    std::vector<State> states;
  };
  struct Occluder {
    bool vertical = true;
    double start = 0.0;
    double speed = 0.0;
    double width = 0.0;
    std::array<float, 3> color{};
  };

  std::vector<State> simulate(Rng& rng) const;
  void paint(Image& img, const Appearance& look, const PixelBox& b) const;

  SynthConfig cfg_;
  std::uint64_t seed_;
  std::string name_;
  Image background_;
  Appearance target_;
  std::vector<State> track_;
  std::vector<Mover> distractors_;
  std::vector<Occluder> occluders_;
};

// `count` sequences whose seeds derive from (cfg.seed, stream, index).
std::vector<std::shared_ptr<const Sequence>> synth_dataset(const SynthConfig& cfg, int count, std::uint64_t stream);

std::unique_ptr<SynthSequence> synth_generate(const SynthConfig& cfg, int length);

}  // namespace aqa
