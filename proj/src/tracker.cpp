#include "aqa/tracker.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <numbers>

#include "aqa/error.hpp"

namespace aqa {

void TrackerConfig::validate() const {
  if (!(template_factor > 0.0)) throw ConfigError("tracker.template_factor: must be positive");
  if (!(search_factor > 0.0)) throw ConfigError("tracker.search_factor: must be positive");
}

std::vector<double> hamming(int n) {
  if (n < 1) throw ContractError("hamming: length must be positive");
  if (n == 1) return {1.0};
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (n - 1));
  return w;
}

Tensor hamming_window(int h, int w) {
  const auto rows = hamming(h), cols = hamming(w);
  std::vector<double> v(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) v[static_cast<std::size_t>(r) * w + c] = rows[r] * cols[c];
  }
  return Tensor({h, w}, std::move(v));
}

std::uint64_t tensor_checksum(const Tensor& t) {
  std::uint64_t hash = 1469598103934665603ULL;
  for (double v : t.values()) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char b : bytes) hash = (hash ^ b) * 1099511628211ULL;
  }
  return hash;
}

Tracker::Tracker(const AqaModel& model, const TrackerConfig& config) : model_(model), config_(config) {
  config_.validate();
  const int g = model_.config().encoder.search_grid();
  window_ = hamming_window(g, g);
}

TrackerState Tracker::init(const Image& frame, const PixelBox& gt) const {
  if (!(gt.w > 0.0) || !(gt.h > 0.0)) throw ContractError("init: first-frame box must have positive size");
  NoGradGuard no_grad;
  const int size = model_.config().encoder.template_size;
  const Crop crop = crop_resize(frame, gt.to_center(), config_.template_factor, size);
  TrackerState state;
  state.template_tokens = model_.embed_template(to_tensor(crop.patch));
  state.template_checksum = tensor_checksum(state.template_tokens.tokens);
  state.window = model_.make_window();
  state.last = gt;
  state.t = 1;
  state.image_width = frame.width;
  state.image_height = frame.height;
  return state;
}

FrameResult Tracker::track(TrackerState& state, const Image& frame, ForwardTrace* trace) const {
  if (state.t < 1) throw ContractError("track: state is not initialized");
  const auto start = std::chrono::steady_clock::now();
  NoGradGuard no_grad;
  const int size = model_.config().encoder.search_size;
  const Crop crop = crop_resize(frame, state.last.to_center(), config_.search_factor, size);
  const TokenSeq search = model_.embed_search(to_tensor(crop.patch));
  FrameOutput out = model_.forward(state.template_tokens, search, state.window, state.t, trace);
  const PredMaps maps = config_.hamming ? apply_prior(out.maps, window_) : out.maps;
  const Detection det = decode_box(maps);

  FrameResult result;
  result.score = det.score;
  result.box = clamp_box(crop.affine.to_image_box(det.box, size), frame.width, frame.height);
  if (out.q_next.defined()) state.window.push(out.q_next);
  state.t += 1;

  // Keep a usable crop base even if the clamped box collapses at a border.
  PixelBox next = result.box;
  if (next.w < 1.0 || next.h < 1.0) {
    const BBox c = next.to_center();
    next = PixelBox::from_center({c.cx, c.cy, std::max(next.w, 1.0), std::max(next.h, 1.0)});
  }
  state.last = next;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace aqa
