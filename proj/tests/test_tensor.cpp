#include <cmath>
#include <filesystem>

#include "aqa/checkpoint.hpp"
#include "aqa/error.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace aqa;
using aqa::testing::max_abs_diff;
using aqa::testing::op_gradcheck;
using aqa::testing::random_tensor;

TEST_CASE("matmul identity, zeros and triple-loop reference") {
  Rng rng(1);
  const Tensor x = random_tensor(rng, {3, 4});
  const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(max_abs_diff(matmul(eye, x).values(), x.values()) == 0.0);

  const Tensor z = matmul(Tensor::zeros({2, 3}), Tensor::ones({3, 2}));
  CHECK(z.shape() == Shape{2, 2});
  for (double v : z.values()) CHECK(v == 0.0);

  const Tensor a = random_tensor(rng, {2, 3});
  const Tensor b = random_tensor(rng, {3, 2});
  const auto ref = aqa::testing::naive_matmul(a.values(), b.values(), 2, 3, 2);
  CHECK(max_abs_diff(matmul(a, b).values(), ref) < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x3] ·") != std::string::npos);
  }
}

TEST_CASE("matmul associativity on random triples") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = random_tensor(rng, {4, 5}), b = random_tensor(rng, {5, 3}), c = random_tensor(rng, {3, 6});
    const Tensor left = matmul(matmul(a, b), c);
    const Tensor right = matmul(a, matmul(b, c));
    double scale = 0.0;
    for (double v : left.values()) scale = std::max(scale, std::fabs(v));
    CHECK(max_abs_diff(left.values(), right.values()) / scale < 1e-9);
  }
}

TEST_CASE("softmax examples") {
  const Tensor u = softmax(Tensor({4}, {0, 0, 0, 0}), 0);
  for (double v : u.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(softmax(Tensor({1}, {5.0}), 0).item() == 1.0);

  const Tensor s = softmax(Tensor({3}, {1, 2, 3}), 0);
  const auto ref = aqa::testing::naive_softmax({1, 2, 3});
  CHECK(max_abs_diff(s.values(), ref) < 1e-9);
}

TEST_CASE("softmax rows sum to one and ignore row shifts") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor(rng, {5, 7}, -20, 20);
    const Tensor y = softmax(x, 1);
    const Tensor shifted = softmax(add_scalar(x, rng.uniform(-50, 50)), 1);
    for (int r = 0; r < 5; ++r) {
      double total = 0.0;
      for (int c = 0; c < 7; ++c) {
        const double v = y.value(r * 7 + c);
        CHECK(v > 0.0);
        CHECK(v < 1.0);
        total += v;
      }
      CHECK(std::fabs(total - 1.0) < 1e-6);
    }
    CHECK(max_abs_diff(y.values(), shifted.values()) < 1e-9);
  }
  // axis 0 normalizes columns
  const Tensor cols = softmax(random_tensor(rng, {4, 3}), 0);
  const Tensor col_sums = sum(cols, 0);
  for (double v : col_sums.values()) CHECK(std::fabs(v - 1.0) < 1e-12);
}

TEST_CASE("elementwise suite examples") {
  Rng rng(4);
  const Tensor x = random_tensor(rng, {3, 2});
  CHECK(max_abs_diff(mul(x, Tensor::ones({3, 2})).values(), x.values()) == 0.0);
  CHECK(mean(Tensor({2}, {2, 4})).item() == 3.0);

  const double k = std::sqrt(2.0 / M_PI);
  const double expected = 0.5 * 1.0 * (1.0 + std::tanh(k * (1.0 + 0.044715)));
  CHECK(std::fabs(gelu(Tensor::scalar(1.0)).item() - expected) < 1e-9);

  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
  CHECK_THROWS_AS(add_bias(Tensor::zeros({2, 3}), Tensor::zeros({2})), DimensionError);
  CHECK_THROWS_AS(mul_rows(Tensor::zeros({2, 3}), Tensor::zeros({3})), DimensionError);

  const Tensor biased = add_bias(Tensor::zeros({2, 3}), Tensor({3}, {1, 2, 3}));
  CHECK(biased.value(4) == 2.0);
  const Tensor gated = mul_rows(Tensor::ones({2, 3}), Tensor({2, 1}, {0.5, 2.0}));
  CHECK(gated.value(1) == 0.5);
  CHECK(gated.value(5) == 2.0);
}

TEST_CASE("layer norm examples") {
  const Tensor g1 = Tensor::ones({2}), b0 = Tensor::zeros({2});
  const Tensor c = layer_norm(Tensor({1, 2}, {7, 7}), g1, b0);
  CHECK(c.value(0) == 0.0);
  CHECK(c.value(1) == 0.0);

  // mean 2, variance 1 → ±1/√(1+ε)
  const Tensor r = layer_norm(Tensor({1, 2}, {1, 3}), g1, b0);
  const double expect = 1.0 / std::sqrt(1.0 + kLayerNormEps);
  CHECK(std::fabs(r.value(0) + expect) < 1e-12);
  CHECK(std::fabs(r.value(1) - expect) < 1e-12);

  const Tensor beta({3}, {0.1, -0.2, 0.3});
  Rng rng(5);
  const Tensor only_beta = layer_norm(random_tensor(rng, {4, 3}), Tensor::zeros({3}), beta);
  for (int i = 0; i < 12; ++i) CHECK(only_beta.value(i) == beta.value(i % 3));

  const Tensor rows = layer_norm(random_tensor(rng, {6, 16}, -5, 5), Tensor::ones({16}), Tensor::zeros({16}));
  for (int row = 0; row < 6; ++row) {
    double mu = 0.0, var = 0.0;
    for (int col = 0; col < 16; ++col) mu += rows.value(row * 16 + col) / 16.0;
    for (int col = 0; col < 16; ++col) var += std::pow(rows.value(row * 16 + col) - mu, 2) / 16.0;
    CHECK(std::fabs(mu) < 1e-5);
    CHECK(std::fabs(var - 1.0) < 1e-5);
  }
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::scalar(3.0, true);
  sum(square(x)).backward();
  CHECK(x.grad()[0] == 6.0);

  // accumulates without an explicit reset
  Tensor loss = sum(square(x));
  loss.backward();
  CHECK(x.grad()[0] == 12.0);
  loss.backward();
  CHECK(x.grad()[0] == 18.0);
  x.zero_grad();
  CHECK_FALSE(x.has_grad());

  Tensor dead = Tensor::scalar(1.0, true);
  Tensor live = Tensor::scalar(2.0, true);
  Tensor unused = mul(dead, dead);
  (void)unused;
  sum(square(live)).backward();
  CHECK(dead.grad().empty());
  CHECK(compare_gradients(dead.grad(), std::vector<double>{0.0}).max_abs_error == 0.0);

  CHECK_THROWS_AS(Tensor::zeros({2}, true).backward(), ContractError);
}

TEST_CASE("graph nodes reject in-place mutation") {
  Tensor x = Tensor::ones({2}, true);
  Tensor y = scale(x, 2.0);
  CHECK_THROWS_AS(y.mutable_values(), ContractError);
  CHECK_NOTHROW(x.mutable_values());
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x = Tensor::ones({2}, true);
  NoGradGuard guard;
  Tensor y = scale(x, 2.0);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.is_leaf());
}

TEST_CASE("fd_grad examples") {
  Tensor x = Tensor::scalar(3.0, true);
  const Tensor g = fd_grad([&] { return x.item() * x.item(); }, x, 1e-4);
  CHECK(std::fabs(g.item() - 6.0) < 1e-7);
  CHECK(x.item() == 3.0);

  Tensor c = Tensor::ones({3}, true);
  const Tensor flat = fd_grad([] { return 1.5; }, c, 1e-4);
  for (double v : flat.values()) CHECK(v == 0.0);

  // softmax cross-entropy: d/dx −log softmax(x)_k = softmax(x) − e_k
  Tensor logits({4}, {0.3, -1.2, 2.0, 0.7}, true);
  const int k = 2;
  const auto xent = [&] { return -std::log(softmax(logits, 0).value(k)); };
  const Tensor numeric = fd_grad(xent, logits, 1e-4);
  const auto p = aqa::testing::naive_softmax({0.3, -1.2, 2.0, 0.7});
  for (int i = 0; i < 4; ++i) CHECK(std::fabs(numeric.value(i) - (p[i] - (i == k ? 1.0 : 0.0))) < 1e-7);
}

TEST_CASE("every differentiable op matches finite differences at 5 seeded points") {
  using Inputs = std::vector<Tensor>;
  struct Case {
    const char* name;
    std::function<Tensor(const Inputs&)> fn;
    std::vector<Shape> shapes;
    double lo = -1.0, hi = 1.0;
  };
  const std::vector<Case> cases = {
      {"matmul", [](const Inputs& v) { return matmul(v[0], v[1]); }, {{3, 4}, {4, 2}}},
      {"matmul_nt", [](const Inputs& v) { return matmul_nt(v[0], v[1]); }, {{3, 4}, {5, 4}}},
      {"transpose", [](const Inputs& v) { return transpose(v[0]); }, {{3, 4}}},
      {"reshape", [](const Inputs& v) { return reshape(v[0], {2, 6}); }, {{3, 4}}},
      {"add", [](const Inputs& v) { return add(v[0], v[1]); }, {{3, 2}, {3, 2}}},
      {"sub", [](const Inputs& v) { return sub(v[0], v[1]); }, {{3, 2}, {3, 2}}},
      {"mul", [](const Inputs& v) { return mul(v[0], v[1]); }, {{3, 2}, {3, 2}}},
      {"div", [](const Inputs& v) { return div(v[0], v[1]); }, {{3, 2}, {3, 2}}, 0.5, 2.0},
      {"minimum", [](const Inputs& v) { return minimum(v[0], v[1]); }, {{4, 3}, {4, 3}}},
      {"maximum", [](const Inputs& v) { return maximum(v[0], v[1]); }, {{4, 3}, {4, 3}}},
      {"add_bias", [](const Inputs& v) { return add_bias(v[0], v[1]); }, {{3, 4}, {4}}},
      {"mul_rows", [](const Inputs& v) { return mul_rows(v[0], v[1]); }, {{3, 4}, {3, 1}}},
      {"scale", [](const Inputs& v) { return scale(v[0], -1.7); }, {{5}}},
      {"add_scalar", [](const Inputs& v) { return add_scalar(v[0], 0.3); }, {{5}}},
      {"square", [](const Inputs& v) { return square(v[0]); }, {{5}}},
      {"abs", [](const Inputs& v) { return abs(v[0]); }, {{5}}},
      {"exp", [](const Inputs& v) { return exp(v[0]); }, {{5}}},
      {"log", [](const Inputs& v) { return log(v[0]); }, {{5}}, 0.2, 3.0},
      {"sigmoid", [](const Inputs& v) { return sigmoid(v[0]); }, {{5}}, -4, 4},
      {"relu", [](const Inputs& v) { return relu(v[0]); }, {{6}}},
      {"gelu", [](const Inputs& v) { return gelu(v[0]); }, {{6}}, -3, 3},
      {"clamp", [](const Inputs& v) { return clamp(v[0], -0.5, 0.5); }, {{6}}},
      {"sum", [](const Inputs& v) { return sum(v[0]); }, {{3, 4}}},
      {"mean", [](const Inputs& v) { return mean(v[0]); }, {{3, 4}}},
      {"sum_axis0", [](const Inputs& v) { return sum(v[0], 0); }, {{3, 4}}},
      {"mean_axis1", [](const Inputs& v) { return mean(v[0], 1); }, {{3, 4}}},
      {"softmax_axis1", [](const Inputs& v) { return softmax(v[0], 1); }, {{3, 5}}, -2, 2},
      {"softmax_axis0", [](const Inputs& v) { return softmax(v[0], 0); }, {{3, 5}}, -2, 2},
      {"layer_norm", [](const Inputs& v) { return layer_norm(v[0], v[1], v[2]); }, {{3, 6}, {6}, {6}}},
      {"concat0", [](const Inputs& v) { return concat({v[0], v[1]}, 0); }, {{2, 3}, {4, 3}}},
      {"concat1", [](const Inputs& v) { return concat({v[0], v[1]}, 1); }, {{2, 3}, {2, 2}}},
      {"slice", [](const Inputs& v) { return slice(v[0], 1, 1, 3); }, {{3, 4}}},
      {"gather", [](const Inputs& v) { return gather(v[0], {0, 5, 5, 7}); }, {{2, 4}}},
      {"im2col3x3", [](const Inputs& v) { return im2col3x3(v[0], 3, 2); }, {{6, 2}}},
      {"space_to_depth2", [](const Inputs& v) { return space_to_depth2(v[0], 2, 4); }, {{8, 3}}},
      {"patchify", [](const Inputs& v) { return patchify(v[0], 2); }, {{4, 2, 3}}},
  };
  Rng rng(6);
  for (const auto& c : cases) {
    for (int point = 0; point < 5; ++point) {
      std::vector<Tensor> inputs;
      for (const auto& s : c.shapes) inputs.push_back(random_tensor(rng, s, c.lo, c.hi));
      const double err = op_gradcheck(c.fn, inputs);
      INFO(c.name << " point " << point);
      CHECK(err < 1e-3);
    }
  }
}

TEST_CASE("ops on finite inputs stay finite") {
  Rng rng(7);
  const Tensor x = random_tensor(rng, {4, 8}, -30, 30);
  for (const Tensor& y : {softmax(x, 1), sigmoid(x), gelu(x), layer_norm(x, Tensor::ones({8}), Tensor::zeros({8})),
                          exp(scale(x, 0.1)), log(add_scalar(abs(x), 1.0))}) {
    for (double v : y.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("structural ops layout") {
  // 2×2 grid of 1-channel tokens → single token in (0,0),(0,1),(1,0),(1,1) order
  const Tensor merged = space_to_depth2(Tensor({4, 1}, {1, 2, 3, 4}), 2, 2);
  CHECK(merged.shape() == Shape{1, 4});
  CHECK(std::vector<double>(merged.values().begin(), merged.values().end()) == std::vector<double>{1, 2, 3, 4});

  // centre token of a 3×3 grid sees all nine neighbours in row-major order
  std::vector<double> seq(9);
  for (int i = 0; i < 9; ++i) seq[i] = i + 1;
  const Tensor cols = im2col3x3(Tensor({9, 1}, seq), 3, 3);
  for (int i = 0; i < 9; ++i) CHECK(cols.value(4 * 9 + i) == i + 1);
  // corner token has zero padding above/left
  CHECK(cols.value(0) == 0.0);
  CHECK(cols.value(4) == 1.0);

  CHECK_THROWS_AS(patchify(Tensor::zeros({6, 4, 3}), 4), ConfigError);
  CHECK_THROWS_AS(space_to_depth2(Tensor::zeros({3, 1}), 1, 3), DimensionError);
}

TEST_CASE("checkpoint encodes the documented layout and round-trips bit-exactly") {
  ParameterStore store;
  store.add("a.weight", Tensor({2, 3}, {1, -2, 3.5, 0.25, 1e-3, -7}));
  store.add("b", Tensor({1}, {0.1}));
  const auto bytes = encode_checkpoint(store);
  REQUIRE(bytes.size() >= 12);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "AQAT");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 2);
  // first entry: name length 8, "a.weight", rank 2, dims 2 and 3
  CHECK(bytes[12] == 8);
  CHECK(std::string(bytes.begin() + 16, bytes.begin() + 24) == "a.weight");
  CHECK(bytes[24] == 2);
  CHECK(bytes[28] == 2);
  CHECK(bytes[32] == 3);
  CHECK(bytes.size() == 12 + (4 + 8 + 4 + 8 + 6 * 4) + (4 + 1 + 4 + 4 + 4));

  ParameterStore other;
  other.add("a.weight", Tensor::zeros({2, 3}));
  other.add("b", Tensor::zeros({1}));
  load_checkpoint(other, bytes);
  CHECK(encode_checkpoint(other) == bytes);
  CHECK(other.all()[0].tensor.value(2) == 3.5);

  const auto path = std::filesystem::temp_directory_path() / "aqa_test_ckpt.bin";
  save_checkpoint(store, path);
  CHECK(read_file_bytes(path) == bytes);
  std::filesystem::remove(path);

  ParameterStore wrong;
  wrong.add("a.weight", Tensor::zeros({3, 2}));
  wrong.add("b", Tensor::zeros({1}));
  CHECK_THROWS_AS(load_checkpoint(wrong, bytes), IoError);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_checkpoint(truncated), IoError);
}
