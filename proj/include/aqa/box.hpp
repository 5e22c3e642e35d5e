#pragma once

#include <algorithm>
#include <cmath>

namespace aqa {

// Center-size box; normalized [0,1] coordinates inside a patch, or pixels
// when produced by PixelBox::to_center.
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return std::max(0.0, w) * std::max(0.0, h); }
  bool operator==(const BBox&) const = default;
};

// Top-left pixel box as used by sequence annotations and result files.
struct PixelBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return std::max(0.0, w) * std::max(0.0, h); }
  BBox to_center() const { return {cx(), cy(), w, h}; }
  static PixelBox from_center(const BBox& b) { return {b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.w, b.h}; }
  bool operator==(const PixelBox&) const = default;
};

// Intersection over union; 0 when the union is empty.
inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::min(a.cx + 0.5 * a.w, b.cx + 0.5 * b.w) - std::max(a.cx - 0.5 * a.w, b.cx - 0.5 * b.w);
  const double iy = std::min(a.cy + 0.5 * a.h, b.cy + 0.5 * b.h) - std::max(a.cy - 0.5 * a.h, b.cy - 0.5 * b.h);
  const double inter = std::max(0.0, ix) * std::max(0.0, iy);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double iou(const PixelBox& a, const PixelBox& b) { return iou(a.to_center(), b.to_center()); }

}  // namespace aqa
