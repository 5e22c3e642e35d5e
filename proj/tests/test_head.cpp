#include "aqa/head.hpp"

#include "aqa/error.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace aqa;
using aqa::testing::max_abs_diff;
using aqa::testing::random_tensor;

namespace {

// Maps with P peaked at (row, col) and B/O set so the decoded box is `box`.
PredMaps maps_for(const BBox& box, int side) {
  PredMaps m;
  m.grid = {side, side};
  const int hw = side * side;
  const int row = std::clamp(static_cast<int>(std::floor(box.cy * side)), 0, side - 1);
  const int col = std::clamp(static_cast<int>(std::floor(box.cx * side)), 0, side - 1);
  std::vector<double> p(hw, 0.1), b(2 * hw, 0.5), o(2 * hw, 0.5);
  const int cell = row * side + col;
  p[cell] = 0.9;
  b[cell] = box.w;
  b[hw + cell] = box.h;
  o[cell] = box.cx * side - col;
  o[hw + cell] = box.cy * side - row;
  m.p = Tensor({side, side}, p);
  m.b = Tensor({2, side, side}, b);
  m.o = Tensor({2, side, side}, o);
  return m;
}

double focal_scalar(double p, double t) {
  if (t == 1.0) return -std::pow(1 - p, 2) * std::log(p);
  return -std::pow(1 - t, 4) * std::pow(p, 2) * std::log(1 - p);
}

}  // namespace

TEST_CASE("head output shapes and ranges") {
  Rng rng(1);
  ParameterStore store;
  CenterHead head(store, 16, rng);
  const PredMaps m = head(random_tensor(rng, {256, 16}));
  CHECK(m.grid == GridSize{16, 16});
  CHECK(m.p.shape() == Shape{16, 16});
  CHECK(m.b.shape() == Shape{2, 16, 16});
  CHECK(m.o.shape() == Shape{2, 16, 16});
  for (const Tensor* t : {&m.p, &m.b, &m.o}) {
    for (double v : t->values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  // cls prior: initial scores sit near 0.1
  double mean_p = 0.0;
  for (double v : m.p.values()) mean_p += v / 256.0;
  CHECK(mean_p == doctest::Approx(0.1).epsilon(0.5));

  CHECK_THROWS_AS(head(random_tensor(rng, {15, 16})), ConfigError);
  CHECK_THROWS_AS(head(random_tensor(rng, {16, 8})), ConfigError);
  CHECK_THROWS_AS(head(random_tensor(rng, {16, 16}), GridSize{3, 5}), ConfigError);
}

TEST_CASE("head gradients match finite differences") {
  Rng rng(2);
  ParameterStore store;
  CenterHead head(store, 8, rng);
  const Tensor x = random_tensor(rng, {16, 8});
  const BBox gt{0.4, 0.6, 0.3, 0.2};
  for (const char* name : {"head.cls.conv1.weight", "head.size.conv2.weight", "head.offset.out.bias"}) {
    Tensor p = store.find(name)->tensor;
    const auto loss = [&] { return total_loss(head(x), gt).total; };
    store.zero_grad();
    loss().backward();
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    const Tensor numeric = fd_grad([&] { return loss().item(); }, p, 1e-6);
    INFO(name);
    CHECK(compare_gradients(analytic, numeric.values()).max_rel_error < 1e-3);
  }
}

TEST_CASE("decode_box examples") {
  PredMaps m;
  m.grid = {4, 4};
  std::vector<double> p(16, 0.0), b(32, 0.0), o(32, 0.0);
  p[1 * 4 + 1] = 0.9;
  b[5] = 0.25;
  b[16 + 5] = 0.5;
  o[5] = 0.5;
  o[16 + 5] = 0.0;
  m.p = Tensor({4, 4}, p);
  m.b = Tensor({2, 4, 4}, b);
  m.o = Tensor({2, 4, 4}, o);
  const Detection d = decode_box(m);
  CHECK(d.row == 1);
  CHECK(d.col == 1);
  CHECK(d.box.cx == doctest::Approx(0.375));
  CHECK(d.box.cy == doctest::Approx(0.25));
  CHECK(d.box.w == doctest::Approx(0.25));
  CHECK(d.box.h == doctest::Approx(0.5));
  CHECK(d.score == doctest::Approx(0.9));

  m.p = Tensor::full({4, 4}, 0.3);
  const Detection tie = decode_box(m);
  CHECK(tie.row == 0);
  CHECK(tie.col == 0);
}

TEST_CASE("decode_box round trip") {
  Rng rng(3);
  for (int side : {4, 5, 16}) {
    for (int i = 0; i < 50; ++i) {
      const BBox gt{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.9), rng.uniform(0.05, 0.9)};
      const Detection d = decode_box(maps_for(gt, side));
      const double cell = 1.0 / (2.0 * side);
      CHECK(std::fabs(d.box.cx - gt.cx) <= cell);
      CHECK(std::fabs(d.box.cy - gt.cy) <= cell);
      CHECK(std::fabs(d.box.w - gt.w) < 1e-12);
    }
  }
}

TEST_CASE("decoded box is invariant to monotone transforms of P") {
  Rng rng(4);
  PredMaps m = maps_for(BBox{0.3, 0.7, 0.2, 0.2}, 8);
  m.p = random_tensor(rng, {8, 8}, 0.01, 0.99);
  const Detection base = decode_box(m);
  PredMaps t = m;
  t.p = sigmoid(scale(log(m.p), 3.0));
  const Detection moved = decode_box(t);
  CHECK(moved.row == base.row);
  CHECK(moved.col == base.col);
}

TEST_CASE("gaussian target") {
  const BBox gt{0.5, 0.5, 0.2, 0.2};
  const Tensor g = gaussian_target(gt, 5, 5);
  CHECK(g.value(2 * 5 + 2) == 1.0);
  int ones = 0;
  for (double v : g.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    ones += v == 1.0 ? 1 : 0;
  }
  CHECK(ones == 1);
  // odd map, centered box: symmetric under both flips
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 5; ++c) {
      CHECK(g.value(r * 5 + c) == g.value((4 - r) * 5 + c));
      CHECK(g.value(r * 5 + c) == g.value(r * 5 + (4 - c)));
    }
  }
  // σ = 1 here: one cell away is exp(-1/2)
  CHECK(g.value(2 * 5 + 3) == doctest::Approx(std::exp(-0.5)));
  // wider boxes spread further
  const Tensor wide = gaussian_target(BBox{0.5, 0.5, 0.9, 0.2}, 16, 16);
  const Tensor narrow = gaussian_target(BBox{0.5, 0.5, 0.1, 0.2}, 16, 16);
  CHECK(wide.value(8 * 16 + 11) > narrow.value(8 * 16 + 11));
}

TEST_CASE("focal loss value and structure") {
  const Tensor p = Tensor::full({2, 2}, 0.5);
  const Tensor t({2, 2}, {1.0, 0.5, 0.0, 0.25});
  double expected = 0.0;
  for (int i = 0; i < 4; ++i) expected += focal_scalar(0.5, t.value(i));
  bool clamped = true;
  const Tensor l = focal_loss(p, t, &clamped);
  CHECK(l.item() == doctest::Approx(expected).epsilon(1e-12));
  CHECK_FALSE(clamped);

  // negatives scaled by c change only the negative term
  Rng rng(5);
  const Tensor q = random_tensor(rng, {4, 4}, 0.05, 0.95);
  const Tensor target = gaussian_target(BBox{0.4, 0.4, 0.5, 0.5}, 4, 4);
  const FocalTerms one = focal_terms(q, target, 1.0);
  const FocalTerms three = focal_terms(q, target, 3.0);
  CHECK(three.positive.item() == one.positive.item());
  CHECK(three.negative.item() == doctest::Approx(3.0 * one.negative.item()).epsilon(1e-12));
  CHECK(one.num_positive == 1);

  bool hit = false;
  const Tensor extreme = focal_loss(Tensor({2}, {0.0, 1.0}), Tensor({2}, {1.0, 0.0}), &hit);
  CHECK(hit);
  CHECK(std::isfinite(extreme.item()));
  CHECK_THROWS_AS(focal_loss(p, Tensor::zeros({4})), DimensionError);
}

TEST_CASE("generalized IoU") {
  const BBox a{0.5, 0.5, 0.2, 0.2};
  CHECK(giou_loss(a, a) == doctest::Approx(0.0));
  // half-overlapping boxes of equal size: IoU 1/3, hull = union, so GIoU = 1/3
  const BBox b{0.6, 0.5, 0.2, 0.2};
  CHECK(giou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(giou(a, b) == doctest::Approx(giou(b, a)));
  // disjoint, far apart, tiny boxes approach a loss of 2
  const BBox far1{0.0, 0.0, 1e-3, 1e-3}, far2{10.0, 10.0, 1e-3, 1e-3};
  CHECK(giou_loss(far1, far2) > 1.999);
  CHECK(giou_loss(far1, far2) <= 2.0);
  // unit squares side by side, gap 1: hull 3x1, union 2, GIoU = -1/3
  const BBox l{0.5, 0.5, 1.0, 1.0}, r{2.5, 0.5, 1.0, 1.0};
  CHECK(giou(l, r) == doctest::Approx(-1.0 / 3.0));
  CHECK(giou_loss(l, r) == doctest::Approx(4.0 / 3.0));
  // nested: inner 0.5x0.5 in 1x1 gives IoU 0.25, hull = union, loss 0.75
  const BBox outer{0.5, 0.5, 1.0, 1.0}, inner{0.5, 0.5, 0.5, 0.5};
  CHECK(giou_loss(inner, outer) == doctest::Approx(0.75));

  CHECK_THROWS_AS(giou_loss(a, BBox{0.5, 0.5, 0.0, 0.2}), ContractError);

  Rng rng(6);
  for (int i = 0; i < 30; ++i) {
    const BBox gt{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5)};
    const BBox pr{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5)};
    const Tensor pt({4}, {pr.cx, pr.cy, pr.w, pr.h});
    CHECK(giou_loss(pt, gt).item() == doctest::Approx(giou_loss(pr, gt)).epsilon(1e-12));
    CHECK(l1_loss(pt, gt).item() == doctest::Approx(l1_loss(pr, gt)).epsilon(1e-12));
    CHECK(giou_loss(pr, gt) >= 0.0);
    CHECK(giou_loss(pr, gt) <= 2.0);
    CHECK(iou(pr, gt) >= 0.0);
    CHECK(iou(pr, gt) <= 1.0);
  }
}

TEST_CASE("tensor box losses are differentiable") {
  Rng rng(7);
  const BBox gt{0.5, 0.45, 0.3, 0.25};
  const double err = aqa::testing::op_gradcheck(
      [&](const std::vector<Tensor>& in) { return add(giou_loss(in[0], gt), l1_loss(in[0], gt)); },
      {Tensor({4}, {0.52, 0.4, 0.35, 0.2})});
  CHECK(err < 1e-4);
}

TEST_CASE("loss weights and combination") {
  const Tensor a = Tensor::scalar(0.7), b = Tensor::scalar(0.3), c = Tensor::scalar(0.11);
  CHECK(combine_losses(a, b, c).item() == 0.7 + 2.0 * 0.3 + 5.0 * 0.11);
  CHECK(kLambdaIou == 2.0);
  CHECK(kLambdaL1 == 5.0);

  const BBox gt{0.4, 0.6, 0.3, 0.2};
  for (int side : {4, 5, 16}) {
    PredMaps m = maps_for(gt, side);
    // perfect P: exactly the target, probabilities kept inside the clamp
    const Tensor target = gaussian_target(gt, side, side);
    m.p = clamp(target, kProbFloor, 1.0 - kProbFloor);
    const LossTerms terms = total_loss(m, gt);
    CHECK(terms.iou.item() < 1e-6);
    CHECK(terms.l1.item() < 1e-6);
    CHECK(terms.total.item() >= 0.0);
    CHECK(terms.total.item() == doctest::Approx(terms.cls.item() + 2 * terms.iou.item() + 5 * terms.l1.item()));
  }
}

TEST_CASE("total loss is non-negative on random maps") {
  Rng rng(8);
  ParameterStore store;
  CenterHead head(store, 8, rng);
  for (int i = 0; i < 10; ++i) {
    const BBox gt{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.6), rng.uniform(0.1, 0.6)};
    const LossTerms t = total_loss(head(random_tensor(rng, {25, 8})), gt);
    CHECK(t.total.item() >= 0.0);
    CHECK(t.cls.item() >= 0.0);
    CHECK(std::isfinite(t.total.item()));
  }
}

TEST_CASE("prior multiplies P only") {
  PredMaps m = maps_for(BBox{0.5, 0.5, 0.2, 0.2}, 4);
  const Tensor prior = Tensor::full({4, 4}, 0.5);
  const PredMaps w = apply_prior(m, prior);
  for (int i = 0; i < 16; ++i) CHECK(w.p.value(i) == 0.5 * m.p.value(i));
  CHECK(max_abs_diff(w.b.values(), m.b.values()) == 0.0);
}
