#pragma once

#include "aqa/box.hpp"
#include "aqa/encoder.hpp"
#include "aqa/nn.hpp"

namespace aqa {

// P: [h×w] in (0,1); B: [2×h×w] (width, height); O: [2×h×w] (x, y)
// sub-cell offsets.
struct PredMaps {
  Tensor p;
  Tensor b;
  Tensor o;
  GridSize grid;
};

struct Detection {
  BBox box;
  double score = 0.0;
  int row = 0;
  int col = 0;
};

// Three conv stacks (3×3 → 3×3 → 1×1, channels D → D/2 → D/4 → k) over the
// search token grid, each ending in a sigmoid.
class CenterHead {
 public:
  CenterHead(ParameterStore& store, int dim, Rng& rng);

  PredMaps operator()(const Tensor& features, GridSize grid) const;
  // Infers a square grid from the token count.
  PredMaps operator()(const Tensor& features) const;

 private:
  struct Branch {
    Linear conv1, conv2, out;
  };
  Tensor run(const Branch& branch, const Tensor& x, GridSize grid) const;

  int dim_;
  Branch cls_, size_, offset_;
};

// Highest P (first occurrence in row-major order wins ties); the box center
// is the cell corner plus the offset, the size is read from B.
Detection decode_box(const PredMaps& maps);

// Cell holding a normalized center; clamped to the map.
std::pair<int, int> center_cell(const BBox& gt, GridSize grid);

// Peak 1 at the center cell, Gaussian falloff with σ = max(1, w_box·w/6)
// cells.
Tensor gaussian_target(const BBox& gt, int h, int w);

inline constexpr double kFocalAlpha = 2.0;
inline constexpr double kFocalBeta = 4.0;
inline constexpr double kProbFloor = 1e-7;

struct FocalTerms {
  Tensor positive;  // Σ over target==1 cells of −(1−p)^α log p
  Tensor negative;  // Σ elsewhere of −(1−t)^β p^α log(1−p), times negative_scale
  int num_positive = 0;
  bool clamped = false;  // some p fell outside [1e-7, 1−1e-7]
};

FocalTerms focal_terms(const Tensor& p, const Tensor& target, double negative_scale = 1.0);
// (positive + negative) / max(1, #positives).
Tensor focal_loss(const Tensor& p, const Tensor& target, bool* clamped = nullptr);

double giou(const BBox& a, const BBox& b);
double giou_loss(const BBox& pred, const BBox& gt);
double l1_loss(const BBox& pred, const BBox& gt);
// pred: [4] tensor (cx, cy, w, h).
Tensor giou_loss(const Tensor& pred, const BBox& gt);
Tensor l1_loss(const Tensor& pred, const BBox& gt);

inline constexpr double kLambdaIou = 2.0;
inline constexpr double kLambdaL1 = 5.0;

struct LossWeights {
  double iou = kLambdaIou;
  double l1 = kLambdaL1;
  bool operator==(const LossWeights&) const = default;
};

struct LossTerms {
  Tensor total;
  Tensor cls;
  Tensor iou;
  Tensor l1;
};

// L = L_cls + λ_iou·L_iou + λ_L1·L_1.
Tensor combine_losses(const Tensor& cls, const Tensor& iou, const Tensor& l1, const LossWeights& weights = {});
// Box predicted at the ground-truth center cell, as a differentiable [4].
Tensor box_at_cell(const PredMaps& maps, int row, int col);
LossTerms total_loss(const PredMaps& maps, const BBox& gt, const LossWeights& weights = {});

// Replaces P with P ⊙ prior (same [h×w] shape).
PredMaps apply_prior(const PredMaps& maps, const Tensor& prior);

}  // namespace aqa
