#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "aqa/box.hpp"
#include "aqa/tensor.hpp"

namespace aqa {

// Interleaved RGB, row-major, values in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, float fill = 0.0f) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool empty() const { return data.empty(); }
  std::array<float, 3> channel_mean() const;
};

// Image→patch similarity transform: u = (x − x0)·s, v = (y − y0)·s.
struct CropAffine {
  double x0 = 0.0;
  double y0 = 0.0;
  double s = 1.0;

  std::array<double, 2> to_patch(double x, double y) const { return {(x - x0) * s, (y - y0) * s}; }
  std::array<double, 2> to_image(double u, double v) const { return {u / s + x0, v / s + y0}; }
  // Normalized patch box (fractions of out_size) ↔ image pixel box.
  BBox to_patch_box(const PixelBox& b, int out_size) const;
  PixelBox to_image_box(const BBox& b, int out_size) const;
};

struct Crop {
  Image patch;
  CropAffine affine;
};

// Square crop of side area_factor·√(w·h) centered on `center`, bilinearly
// resampled to out_size; pixels outside the image take the channel mean.
Crop crop_resize(const Image& image, const BBox& center, double area_factor, int out_size);
// As above with an explicit crop side in pixels.
Crop crop_square(const Image& image, double cx, double cy, double side, int out_size);

// [H×W×3] tensor with (v − 0.5)/0.25 per channel.
Tensor to_tensor(const Image& image);

Image flip_horizontal(const Image& image);
Image scale_brightness(const Image& image, double factor);

PixelBox clamp_box(const PixelBox& b, int width, int height);
void draw_box(Image& image, const PixelBox& b, std::array<float, 3> color);

// Binary 8-bit PPM (P6).
void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

}  // namespace aqa
