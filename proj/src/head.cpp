#include "aqa/head.hpp"

#include <cmath>

#include "aqa/error.hpp"

namespace aqa {

namespace {

constexpr double kClsPriorBias = -2.19;  // sigmoid ≈ 0.1 at init

}  // namespace

CenterHead::CenterHead(ParameterStore& store, int dim, Rng& rng) : dim_(dim) {
  if (dim % 4 != 0) throw ConfigError("head: dim must be a multiple of 4");
  auto branch = [&](const std::string& name, int out) {
    Branch b{Linear(store, "head." + name + ".conv1", 9 * dim, dim / 2, rng),
             Linear(store, "head." + name + ".conv2", 9 * (dim / 2), dim / 4, rng),
             Linear(store, "head." + name + ".out", dim / 4, out, rng)};
    return b;
  };
  cls_ = branch("cls", 1);
  size_ = branch("size", 2);
  offset_ = branch("offset", 2);
  auto bias = cls_.out.bias.mutable_values();
  for (double& v : bias) v = kClsPriorBias;
}

Tensor CenterHead::run(const Branch& branch, const Tensor& x, GridSize grid) const {
  Tensor y = gelu(branch.conv1(im2col3x3(x, grid.h, grid.w)));
  y = gelu(branch.conv2(im2col3x3(y, grid.h, grid.w)));
  return sigmoid(branch.out(y));
}

PredMaps CenterHead::operator()(const Tensor& features, GridSize grid) const {
  if (features.rank() != 2 || features.dim(1) != dim_) {
    throw ConfigError("head: expected [N×" + std::to_string(dim_) + "] features, got " + shape_str(features.shape()));
  }
  if (grid.count() != features.dim(0)) {
    throw ConfigError("head: " + std::to_string(features.dim(0)) + " tokens do not fill a " + std::to_string(grid.h) +
                      "x" + std::to_string(grid.w) + " grid");
  }
  PredMaps maps;
  maps.grid = grid;
  maps.p = reshape(run(cls_, features, grid), {grid.h, grid.w});
  maps.b = reshape(transpose(run(size_, features, grid)), {2, grid.h, grid.w});
  maps.o = reshape(transpose(run(offset_, features, grid)), {2, grid.h, grid.w});
  return maps;
}

PredMaps CenterHead::operator()(const Tensor& features) const {
  const int n = features.dim(0);
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) {
    throw ConfigError("head: " + std::to_string(n) + " search tokens do not form a square grid");
  }
  return (*this)(features, GridSize{side, side});
}

Detection decode_box(const PredMaps& maps) {
  const auto p = maps.p.values();
  const int h = maps.grid.h, w = maps.grid.w;
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;
  }
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Detection d;
  d.row = static_cast<int>(best / w);
  d.col = static_cast<int>(best % w);
  d.score = p[best];
  d.box.cx = (d.col + maps.o.value(best)) / w;
  d.box.cy = (d.row + maps.o.value(hw + best)) / h;
  d.box.w = maps.b.value(best);
  d.box.h = maps.b.value(hw + best);
  return d;
}

std::pair<int, int> center_cell(const BBox& gt, GridSize grid) {
  const int row = std::clamp(static_cast<int>(std::floor(gt.cy * grid.h)), 0, grid.h - 1);
  const int col = std::clamp(static_cast<int>(std::floor(gt.cx * grid.w)), 0, grid.w - 1);
  return {row, col};
}

Tensor gaussian_target(const BBox& gt, int h, int w) {
  const auto [r0, c0] = center_cell(gt, {h, w});
  const double sigma = std::max(1.0, gt.w * w / 6.0);
  const double denom = 2.0 * sigma * sigma;
  std::vector<double> v(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double d2 = static_cast<double>((r - r0) * (r - r0) + (c - c0) * (c - c0));
      v[static_cast<std::size_t>(r) * w + c] = std::exp(-d2 / denom);
    }
  }
  return Tensor({h, w}, std::move(v));
}

FocalTerms focal_terms(const Tensor& p, const Tensor& target, double negative_scale) {
  if (p.shape() != target.shape()) {
    throw DimensionError("focal_loss: prediction " + shape_str(p.shape()) + " vs target " + shape_str(target.shape()));
  }
  FocalTerms terms;
  const auto pv = p.values();
  for (double v : pv) terms.clamped = terms.clamped || v < kProbFloor || v > 1.0 - kProbFloor;
  const Tensor pc = clamp(p, kProbFloor, 1.0 - kProbFloor);

  const auto tv = target.values();
  std::vector<double> pos_mask(tv.size()), neg_weight(tv.size());
  for (std::size_t i = 0; i < tv.size(); ++i) {
    const bool positive = tv[i] == 1.0;
    pos_mask[i] = positive ? 1.0 : 0.0;
    neg_weight[i] = positive ? 0.0 : negative_scale * std::pow(1.0 - tv[i], kFocalBeta);
    terms.num_positive += positive ? 1 : 0;
  }
  const Tensor one_minus_p = add_scalar(scale(pc, -1.0), 1.0);
  const Tensor pos = mul(Tensor(p.shape(), pos_mask), mul(square(one_minus_p), log(pc)));
  const Tensor neg = mul(Tensor(p.shape(), neg_weight), mul(square(pc), log(one_minus_p)));
  terms.positive = scale(sum(pos), -1.0);
  terms.negative = scale(sum(neg), -1.0);
  return terms;
}

Tensor focal_loss(const Tensor& p, const Tensor& target, bool* clamped) {
  const FocalTerms t = focal_terms(p, target);
  if (clamped != nullptr) *clamped = t.clamped;
  return scale(add(t.positive, t.negative), 1.0 / std::max(1, t.num_positive));
}

double giou(const BBox& a, const BBox& b) {
  const double ax1 = a.cx - 0.5 * a.w, ax2 = a.cx + 0.5 * a.w, ay1 = a.cy - 0.5 * a.h, ay2 = a.cy + 0.5 * a.h;
  const double bx1 = b.cx - 0.5 * b.w, bx2 = b.cx + 0.5 * b.w, by1 = b.cy - 0.5 * b.h, by2 = b.cy + 0.5 * b.h;
  const double inter = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1)) *
                       std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double uni = a.area() + b.area() - inter;
  const double hull = (std::max(ax2, bx2) - std::min(ax1, bx1)) * (std::max(ay2, by2) - std::min(ay1, by1));
  if (uni <= 0.0 || hull <= 0.0) throw ContractError("giou: degenerate boxes");
  return inter / uni - (hull - uni) / hull;
}

double giou_loss(const BBox& pred, const BBox& gt) {
  if (gt.area() <= 0.0) throw ContractError("giou_loss: ground-truth box has zero area");
  return 1.0 - giou(pred, gt);
}

double l1_loss(const BBox& pred, const BBox& gt) {
  return 0.25 * (std::fabs(pred.cx - gt.cx) + std::fabs(pred.cy - gt.cy) + std::fabs(pred.w - gt.w) +
                 std::fabs(pred.h - gt.h));
}

Tensor giou_loss(const Tensor& pred, const BBox& gt) {
  if (pred.numel() != 4) throw DimensionError("giou_loss: expected [4] box, got " + shape_str(pred.shape()));
  if (gt.area() <= 0.0) throw ContractError("giou_loss: ground-truth box has zero area");
  const Tensor cx = slice(pred, 0, 0, 1), cy = slice(pred, 0, 1, 2);
  const Tensor w = slice(pred, 0, 2, 3), h = slice(pred, 0, 3, 4);
  const Tensor half_w = scale(w, 0.5), half_h = scale(h, 0.5);
  const Tensor px1 = sub(cx, half_w), px2 = add(cx, half_w);
  const Tensor py1 = sub(cy, half_h), py2 = add(cy, half_h);
  const auto c = [](double v) { return Tensor::scalar(v); };
  const Tensor gx1 = c(gt.cx - 0.5 * gt.w), gx2 = c(gt.cx + 0.5 * gt.w);
  const Tensor gy1 = c(gt.cy - 0.5 * gt.h), gy2 = c(gt.cy + 0.5 * gt.h);

  const Tensor iw = relu(sub(minimum(px2, gx2), maximum(px1, gx1)));
  const Tensor ih = relu(sub(minimum(py2, gy2), maximum(py1, gy1)));
  const Tensor inter = mul(iw, ih);
  const Tensor uni = sub(add(mul(w, h), c(gt.area())), inter);
  const Tensor hull = mul(sub(maximum(px2, gx2), minimum(px1, gx1)), sub(maximum(py2, gy2), minimum(py1, gy1)));
  const Tensor g = sub(div(inter, uni), div(sub(hull, uni), hull));
  return reshape(add_scalar(scale(g, -1.0), 1.0), {1});
}

Tensor l1_loss(const Tensor& pred, const BBox& gt) {
  if (pred.numel() != 4) throw DimensionError("l1_loss: expected [4] box, got " + shape_str(pred.shape()));
  return mean(abs(sub(pred, Tensor({4}, {gt.cx, gt.cy, gt.w, gt.h}))));
}

Tensor combine_losses(const Tensor& cls, const Tensor& iou, const Tensor& l1, const LossWeights& weights) {
  return add(add(cls, scale(iou, weights.iou)), scale(l1, weights.l1));
}

Tensor box_at_cell(const PredMaps& maps, int row, int col) {
  const int h = maps.grid.h, w = maps.grid.w;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t cell = static_cast<std::size_t>(row) * w + col;
  const Tensor off = gather(maps.o, {cell, hw + cell});
  const Tensor size = gather(maps.b, {cell, hw + cell});
  const Tensor cx = scale(add_scalar(slice(off, 0, 0, 1), col), 1.0 / w);
  const Tensor cy = scale(add_scalar(slice(off, 0, 1, 2), row), 1.0 / h);
  return concat({cx, cy, size}, 0);
}

LossTerms total_loss(const PredMaps& maps, const BBox& gt, const LossWeights& weights) {
  LossTerms t;
  t.cls = focal_loss(maps.p, gaussian_target(gt, maps.grid.h, maps.grid.w));
  const auto [row, col] = center_cell(gt, maps.grid);
  const Tensor pred = box_at_cell(maps, row, col);
  t.iou = giou_loss(pred, gt);
  t.l1 = l1_loss(pred, gt);
  t.total = combine_losses(t.cls, t.iou, t.l1, weights);
  return t;
}

PredMaps apply_prior(const PredMaps& maps, const Tensor& prior) {
  PredMaps out = maps;
  out.p = mul(maps.p, prior);
  return out;
}

}  // namespace aqa
