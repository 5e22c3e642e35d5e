#include "aqa/encoder.hpp"

#include <numeric>

#include "aqa/error.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace aqa;
using aqa::testing::max_abs_diff;
using aqa::testing::probe_loss;
using aqa::testing::random_tensor;

namespace {

EncoderConfig small_config(int template_size, int search_size, int dim = 16, int layers = 1) {
  EncoderConfig c;
  c.template_size = template_size;
  c.search_size = search_size;
  c.dim = dim;
  c.layers = layers;
  c.heads = 2;
  return c;
}

void zero_param(const ParameterStore& store, const std::string& name) {
  const Parameter* p = store.find(name);
  REQUIRE(p != nullptr);
  Tensor t = p->tensor;
  for (double& v : t.mutable_values()) v = 0.0;
}

}  // namespace

TEST_CASE("token counts follow the stride-16 formulas") {
  ParameterStore store;
  Rng rng(1);
  SpatialEncoder enc(store, small_config(128, 256, 16, 0), rng);
  Rng data(2);

  const TokenSeq z4 = enc.patch_embed(random_tensor(data, {128, 128, 3}), TokenOrigin::Template);
  CHECK(z4.count() == 1024);
  CHECK(z4.grid == GridSize{32, 32});
  CHECK(z4.channels() == 4);
  const TokenSeq z = enc.embed(random_tensor(data, {128, 128, 3}), TokenOrigin::Template);
  CHECK(z.count() == 64);
  CHECK(z.channels() == 16);

  const TokenSeq x = enc.embed(random_tensor(data, {256, 256, 3}), TokenOrigin::Search);
  CHECK(x.count() == 256);
  CHECK(enc.config().search_tokens() == 256);

  const TokenSeq joint = enc.encode(z, x);
  CHECK(joint.count() == 320);
  CHECK(joint.search_part().count() == 256);
  CHECK(joint.search_part().grid == GridSize{16, 16});
  CHECK(joint.template_part().count() == 64);

  const TokenSeq toy = enc.patch_embed(random_tensor(data, {16, 16, 3}), TokenOrigin::Search);
  CHECK(toy.count() == 16);
  TokenSeq t = toy;
  for (int s = 0; s < EncoderConfig::kMerges; ++s) t = enc.patch_merge(enc.mlp_stage(t, s), s);
  CHECK(t.count() == 1);
  CHECK(t.channels() == 16);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(small_config(40, 64).validate(), ConfigError);
  CHECK_THROWS_AS(small_config(32, 72).validate(), ConfigError);
  EncoderConfig bad_heads = small_config(32, 64);
  bad_heads.heads = 3;
  CHECK_THROWS_AS(bad_heads.validate(), ConfigError);
  ParameterStore store;
  Rng rng(1);
  SpatialEncoder enc(store, small_config(32, 64), rng);
  Rng data(3);
  CHECK_THROWS_AS(enc.patch_embed(random_tensor(data, {18, 16, 3}), TokenOrigin::Search), ConfigError);
}

TEST_CASE("mlp stage preserves shape and is identity with zeroed projections") {
  ParameterStore store;
  Rng rng(4);
  SpatialEncoder enc(store, small_config(32, 64), rng);
  Rng data(5);
  const TokenSeq x = enc.patch_embed(random_tensor(data, {64, 64, 3}), TokenOrigin::Search);
  const TokenSeq y = enc.mlp_stage(x, 0);
  CHECK(y.tokens.shape() == x.tokens.shape());
  CHECK(y.grid == x.grid);
  CHECK(max_abs_diff(y.tokens.values(), x.tokens.values()) > 0.0);

  for (int b = 0; b < 4; ++b) {
    const std::string prefix = "encoder.stage0.block" + std::to_string(b) + ".mlp.fc2.";
    zero_param(store, prefix + "weight");
    zero_param(store, prefix + "bias");
  }
  const TokenSeq id = enc.mlp_stage(x, 0);
  CHECK(max_abs_diff(id.tokens.values(), x.tokens.values()) == 0.0);
}

TEST_CASE("mlp stage gradient matches finite differences") {
  ParameterStore store;
  Rng rng(6);
  SpatialEncoder enc(store, small_config(32, 32, 8), rng);
  Rng data(7);
  const TokenSeq x = enc.patch_embed(random_tensor(data, {16, 16, 3}), TokenOrigin::Search);
  Tensor w = store.find("encoder.stage0.block1.mlp.fc1.weight")->tensor;
  const auto loss = [&] { return probe_loss(enc.mlp_stage(x, 0).tokens); };
  store.zero_grad();
  loss().backward();
  const std::vector<double> analytic(w.grad().begin(), w.grad().end());
  const Tensor numeric = fd_grad([&] { return loss().item(); }, w, 1e-5);
  CHECK(compare_gradients(analytic, numeric.values()).max_rel_error < 1e-3);
}

TEST_CASE("patch merge halves the grid") {
  ParameterStore store;
  Rng rng(8);
  SpatialEncoder enc(store, small_config(128, 128), rng);
  Rng data(9);
  const TokenSeq x = enc.patch_embed(random_tensor(data, {128, 128, 3}), TokenOrigin::Search);
  REQUIRE(x.grid == GridSize{32, 32});
  const TokenSeq m = enc.patch_merge(x, 0);
  CHECK(m.grid == GridSize{16, 16});
  CHECK(m.count() * 4 == x.count());
  CHECK(m.channels() == 2 * x.channels());

  TokenSeq same;
  const Tensor row = random_tensor(data, {1, 4});
  same.tokens = concat({row, row, row, row}, 0);
  same.grid = {2, 2};
  const TokenSeq one = enc.patch_merge(same, 0);
  CHECK(one.count() == 1);
  CHECK(max_abs_diff(one.tokens.values(), enc.patch_merge(same, 0).tokens.values()) == 0.0);

  TokenSeq odd;
  odd.tokens = random_tensor(data, {6, 4});
  odd.grid = {3, 2};
  CHECK_THROWS_AS(enc.patch_merge(odd, 0), ConfigError);
}

TEST_CASE("zero-depth encoder is layer norm of the concatenation") {
  ParameterStore store;
  Rng rng(10);
  SpatialEncoder enc(store, small_config(32, 64, 16, 0), rng);
  Rng data(11);
  const TokenSeq z = enc.embed(random_tensor(data, {32, 32, 3}), TokenOrigin::Template);
  const TokenSeq x = enc.embed(random_tensor(data, {64, 64, 3}), TokenOrigin::Search);
  const TokenSeq joint = enc.encode(z, x);
  const Tensor ref = layer_norm(concat({z.tokens, x.tokens}, 0), Tensor::ones({16}), Tensor::zeros({16}));
  CHECK(max_abs_diff(joint.tokens.values(), ref.values()) == 0.0);
}

TEST_CASE("recorded encoder attention rows sum to one") {
  ParameterStore store;
  Rng rng(12);
  SpatialEncoder enc(store, small_config(32, 64, 16, 3), rng);
  Rng data(13);
  AttentionTrace trace;
  enc.encode(enc.embed(random_tensor(data, {32, 32, 3}), TokenOrigin::Template),
             enc.embed(random_tensor(data, {64, 64, 3}), TokenOrigin::Search), &trace);
  CHECK(trace.probabilities.size() == 3 * 2);
  for (const auto& p : trace.probabilities) {
    CHECK(p.shape() == Shape{20, 20});
    for (int r = 0; r < 20; ++r) {
      double s = 0.0;
      for (int c = 0; c < 20; ++c) s += p.value(r * 20 + c);
      CHECK(std::fabs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("search token permutation permutes the search output rows") {
  ParameterStore store;
  Rng rng(14);
  SpatialEncoder enc(store, small_config(32, 64, 16, 2), rng);
  Rng data(15);
  const TokenSeq z = enc.embed(random_tensor(data, {32, 32, 3}), TokenOrigin::Template);
  const TokenSeq x = enc.embed(random_tensor(data, {64, 64, 3}), TokenOrigin::Search);
  std::vector<int> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[3], perm[9]);
  std::vector<Tensor> rows;
  for (int i : perm) rows.push_back(slice(x.tokens, 0, i, i + 1));
  TokenSeq xp = x;
  xp.tokens = concat(rows, 0);

  const Tensor out = enc.encode(z, x).search_part().tokens;
  const Tensor out_p = enc.encode(z, xp).search_part().tokens;
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 16; ++c) {
      CHECK(std::fabs(out_p.value(r * 16 + c) - out.value(perm[r] * 16 + c)) < 1e-12);
    }
  }
}

TEST_CASE("encoder output depends on the template") {
  ParameterStore store;
  Rng rng(16);
  SpatialEncoder enc(store, small_config(32, 64, 16, 2), rng);
  Rng data(17);
  const TokenSeq x = enc.embed(random_tensor(data, {64, 64, 3}), TokenOrigin::Search);
  const Tensor a = enc.encode(enc.embed(random_tensor(data, {32, 32, 3}), TokenOrigin::Template), x).search_part().tokens;
  const Tensor b = enc.encode(enc.embed(random_tensor(data, {32, 32, 3}), TokenOrigin::Template), x).search_part().tokens;
  double frob = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) frob += std::pow(a.value(i) - b.value(i), 2);
  CHECK(frob > 0.0);
}
