#pragma once

#include <cstdint>
#include <functional>

#include "aqa/image.hpp"
#include "aqa/model.hpp"

namespace aqa {

struct TrackerConfig {
  double template_factor = 2.0;
  double search_factor = 4.0;
  bool hamming = true;

  void validate() const;
  bool operator==(const TrackerConfig&) const = default;
};

struct TrackerState {
  TokenSeq template_tokens;
  std::uint64_t template_checksum = 0;
  QueryWindow window{1};
  PixelBox last;
  int t = 0;  // index of the next frame the decoder sees; 1 right after init
  int image_width = 0;
  int image_height = 0;
};

struct FrameResult {
  PixelBox box;
  double score = 0.0;
  double seconds = 0.0;
};

// 1-D Hamming taper 0.54 − 0.46·cos(2πn/(N−1)); 1 for N = 1.
std::vector<double> hamming(int n);
// Outer product of the row and column tapers, [h×w].
Tensor hamming_window(int h, int w);

// FNV-1a over the raw bytes of a tensor's values.
std::uint64_t tensor_checksum(const Tensor& t);

class Tracker {
 public:
  Tracker(const AqaModel& model, const TrackerConfig& config);

  TrackerState init(const Image& frame, const PixelBox& gt) const;
  // Optional trace receives the decoder instrumentation for this frame.
  FrameResult track(TrackerState& state, const Image& frame, ForwardTrace* trace = nullptr) const;

  const TrackerConfig& config() const { return config_; }

 private:
  const AqaModel& model_;
  TrackerConfig config_;
  Tensor window_;
};

}  // namespace aqa
