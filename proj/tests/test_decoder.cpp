#include "aqa/decoder.hpp"

#include "aqa/error.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace aqa;
using aqa::testing::max_abs_diff;
using aqa::testing::random_tensor;
using aqa::testing::reference_attention;

namespace {

DecoderConfig small_decoder(int layers, int window, int dim = 8, int heads = 2) {
  DecoderConfig c;
  c.layers = layers;
  c.dim = dim;
  c.heads = heads;
  c.ffn_dim = 2 * dim;
  c.window = window;
  return c;
}

TokenSeq random_spatial(Rng& rng, int count, int dim) {
  TokenSeq s;
  s.tokens = random_tensor(rng, {count, dim});
  s.origin = TokenOrigin::Joint;
  s.grid = {2, 2};
  s.template_grid = {1, count - 4};
  s.search_offset = count - 4;
  return s;
}

void zero_param(const ParameterStore& store, const std::string& name) {
  const Parameter* p = store.find(name);
  REQUIRE(p != nullptr);
  Tensor t = p->tensor;
  for (double& v : t.mutable_values()) v = 0.0;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

}  // namespace

TEST_CASE("assemble_window follows the sliding-window rule") {
  Rng rng(1);
  const Tensor q_cur = random_tensor(rng, {1, 4});
  QueryWindow w(4);
  const Tensor first = assemble_window(w, 1, q_cur);
  CHECK(first.dim(0) == 1);
  CHECK(bitwise_equal(first, q_cur));

  std::vector<Tensor> pushed;
  for (int t = 1; t <= 9; ++t) {
    pushed.push_back(random_tensor(rng, {1, 4}));
    w.push(pushed.back());
    if (t == 2) {
      const Tensor at3 = assemble_window(w, 3, q_cur);
      REQUIRE(at3.dim(0) == 3);
      CHECK(bitwise_equal(slice(at3, 0, 0, 1), pushed[0]));
      CHECK(bitwise_equal(slice(at3, 0, 1, 2), pushed[1]));
      CHECK(bitwise_equal(slice(at3, 0, 2, 3), q_cur));
    }
  }
  const Tensor at10 = assemble_window(w, 10, q_cur);
  REQUIRE(at10.dim(0) == 4);
  for (int i = 0; i < 3; ++i) CHECK(bitwise_equal(slice(at10, 0, i, i + 1), pushed[6 + i]));
  CHECK(bitwise_equal(slice(at10, 0, 3, 4), q_cur));

  CHECK_THROWS_AS(assemble_window(w, 2, q_cur), InvariantError);
  CHECK_THROWS_AS(assemble_window(w, 0, q_cur), ContractError);
}

TEST_CASE("push keeps at most m-1 entries") {
  Rng rng(2);
  QueryWindow w(4);
  w.push(random_tensor(rng, {1, 4}));
  CHECK(w.history().size() == 1);
  w.push(random_tensor(rng, {1, 4}));
  const Tensor third = random_tensor(rng, {1, 4});
  w.push(third);
  const Tensor second = w.history()[1];
  w.push(random_tensor(rng, {1, 4}));
  CHECK(w.history().size() == 3);
  CHECK(w.history().front().same_node(second));
  CHECK(w.history()[1].same_node(third));

  QueryWindow single(1);
  single.push(random_tensor(rng, {1, 4}));
  CHECK(single.history().empty());
  CHECK_THROWS_AS(w.push(random_tensor(rng, {2, 4})), DimensionError);
}

TEST_CASE("multi-head attention against the per-head reference") {
  Rng rng(3);
  SUBCASE("single key gives the value path") {
    ParameterStore store;
    MultiHeadAttention mha(store, "mha", 8, 2, rng);
    const Tensor q = random_tensor(rng, {3, 8});
    const Tensor kv = random_tensor(rng, {1, 8});
    const Tensor out = mha(q, kv, kv);
    const Tensor path = matmul(matmul(kv, mha.wv.weight), mha.wo.weight);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 8; ++c) CHECK(std::fabs(out.value(r * 8 + c) - path.value(c)) < 1e-15);
    }
  }
  SUBCASE("identical keys make the output independent of value order") {
    ParameterStore store;
    MultiHeadAttention mha(store, "mha", 8, 2, rng);
    const Tensor q = random_tensor(rng, {2, 8});
    const Tensor key = random_tensor(rng, {1, 8});
    const Tensor k = concat({key, key, key}, 0);
    const Tensor v = random_tensor(rng, {3, 8});
    const Tensor v_rev = concat({slice(v, 0, 2, 3), slice(v, 0, 1, 2), slice(v, 0, 0, 1)}, 0);
    CHECK(max_abs_diff(mha(q, k, v).values(), mha(q, k, v_rev).values()) < 1e-12);
  }
  SUBCASE("random 2x8 with two heads") {
    ParameterStore store;
    MultiHeadAttention mha(store, "mha", 8, 2, rng);
    const Tensor q = random_tensor(rng, {2, 8}), k = random_tensor(rng, {5, 8}), v = random_tensor(rng, {5, 8});
    const auto ref = reference_attention(q.values(), 2, k.values(), v.values(), 5, mha.wq.weight.values(),
                                         mha.wk.weight.values(), mha.wv.weight.values(), mha.wo.weight.values(), 8, 2);
    CHECK(max_abs_diff(mha(q, k, v).values(), ref) < 1e-9);
  }
  ParameterStore bad;
  CHECK_THROWS_AS(MultiHeadAttention(bad, "bad", 8, 3, rng), ConfigError);
}

TEST_CASE("temporal attention") {
  Rng rng(4);
  ParameterStore store;
  TemporalDecoder dec(store, small_decoder(1, 4), rng);
  const auto& norm_g = store.find("decoder.layer0.ta_norm.gamma")->tensor;
  const auto& norm_b = store.find("decoder.layer0.ta_norm.beta")->tensor;
  const auto wv = store.find("decoder.layer0.ta.wv.weight")->tensor;
  const auto wo = store.find("decoder.layer0.ta.wo.weight")->tensor;

  const Tensor q = random_tensor(rng, {1, 8});
  const Tensor single = dec.temporal_attention(0, q, q);
  const Tensor expected = add(q, matmul(matmul(layer_norm(q, norm_g, norm_b), wv), wo));
  CHECK(max_abs_diff(single.values(), expected.values()) < 1e-12);

  const Tensor repeated = concat({q, q, q, q}, 0);
  CHECK(max_abs_diff(dec.temporal_attention(0, q, repeated).values(), single.values()) < 1e-12);

  const Tensor window = random_tensor(rng, {4, 8});
  const Tensor cur = slice(window, 0, 3, 4);
  const Tensor normed = layer_norm(window, norm_g, norm_b);
  const Tensor normed_cur = slice(normed, 0, 3, 4);
  const auto attn = reference_attention(normed_cur.values(), 1, normed.values(), normed.values(), 4,
                                        store.find("decoder.layer0.ta.wq.weight")->tensor.values(),
                                        store.find("decoder.layer0.ta.wk.weight")->tensor.values(), wv.values(),
                                        wo.values(), 8, 2);
  const Tensor out = dec.temporal_attention(0, cur, window);
  for (int c = 0; c < 8; ++c) CHECK(std::fabs(out.value(c) - (cur.value(c) + attn[c])) < 1e-9);

  CHECK_THROWS_AS(dec.temporal_attention(0, slice(window, 0, 0, 1), window), InvariantError);
}

TEST_CASE("decoder layer: identity when output projections are zero; shape; gradient") {
  Rng rng(5);
  ParameterStore store;
  TemporalDecoder dec(store, small_decoder(1, 4), rng);
  const TokenSeq spatial = random_spatial(rng, 6, 8);
  for (int k = 1; k <= 4; ++k) {
    const Tensor q_all = random_tensor(rng, {k, 8});
    CHECK(dec.layer_forward(0, q_all, spatial).shape() == q_all.shape());
  }

  SUBCASE("fd gradient through one layer") {
    const Tensor q_all = random_tensor(rng, {3, 8});
    for (const char* name : {"decoder.layer0.ta.wk.weight", "decoder.layer0.cross.wq.weight",
                             "decoder.layer0.ffn.fc1.weight", "decoder.layer0.cross_norm.gamma"}) {
      Tensor p = store.find(name)->tensor;
      const auto loss = [&] { return aqa::testing::probe_loss(dec.layer_forward(0, q_all, spatial)); };
      store.zero_grad();
      loss().backward();
      const std::vector<double> analytic(p.grad().begin(), p.grad().end());
      const Tensor numeric = fd_grad([&] { return loss().item(); }, p, 1e-5);
      INFO(name);
      CHECK(compare_gradients(analytic, numeric.values()).max_rel_error < 1e-3);
    }
  }
  SUBCASE("zeroed output projections") {
    zero_param(store, "decoder.layer0.ta.wo.weight");
    zero_param(store, "decoder.layer0.cross.wo.weight");
    zero_param(store, "decoder.layer0.ffn.fc2.weight");
    zero_param(store, "decoder.layer0.ffn.fc2.bias");
    const Tensor q_all = random_tensor(rng, {3, 8});
    CHECK(max_abs_diff(dec.layer_forward(0, q_all, spatial).values(), q_all.values()) == 0.0);
  }
}

TEST_CASE("temporal attention leaves history rows untouched within a layer") {
  Rng rng(6);
  ParameterStore store;
  TemporalDecoder dec(store, small_decoder(1, 4), rng);
  zero_param(store, "decoder.layer0.cross.wo.weight");
  zero_param(store, "decoder.layer0.ffn.fc2.weight");
  zero_param(store, "decoder.layer0.ffn.fc2.bias");
  const TokenSeq spatial = random_spatial(rng, 6, 8);
  const Tensor q_all = random_tensor(rng, {4, 8});
  const Tensor out = dec.layer_forward(0, q_all, spatial);
  CHECK(max_abs_diff(slice(out, 0, 0, 3).values(), slice(q_all, 0, 0, 3).values()) == 0.0);
  CHECK(max_abs_diff(slice(out, 0, 3, 4).values(), slice(q_all, 0, 3, 4).values()) > 0.0);

  // The self-attention variant rewrites every row.
  ParameterStore store_sa;
  Rng rng_sa(6);
  DecoderConfig sa = small_decoder(1, 4);
  sa.self_attention = true;
  TemporalDecoder dec_sa(store_sa, sa, rng_sa);
  zero_param(store_sa, "decoder.layer0.cross.wo.weight");
  zero_param(store_sa, "decoder.layer0.ffn.fc2.weight");
  zero_param(store_sa, "decoder.layer0.ffn.fc2.bias");
  const Tensor out_sa = dec_sa.layer_forward(0, q_all, spatial);
  CHECK(max_abs_diff(slice(out_sa, 0, 0, 1).values(), slice(q_all, 0, 0, 1).values()) > 0.0);
}

TEST_CASE("decode with zero layers is the input projection of the window") {
  Rng rng(7);
  ParameterStore store;
  TemporalDecoder dec(store, small_decoder(0, 4), rng);
  const TokenSeq spatial = random_spatial(rng, 6, 8);
  QueryWindow w(4);
  w.push(random_tensor(rng, {1, 8}));
  const DecodeResult r = dec.decode(w, 2, spatial);
  const Tensor proj = add_bias(matmul(r.window, store.find("decoder.input_proj.weight")->tensor),
                               store.find("decoder.input_proj.bias")->tensor);
  CHECK(max_abs_diff(r.f_temporal.values(), proj.values()) == 0.0);
}

TEST_CASE("decode/push over frames reproduces the window law and the autoregression identity") {
  for (int m : {1, 2, 4}) {
    Rng rng(8);
    ParameterStore store;
    TemporalDecoder dec(store, small_decoder(2, m), rng);
    const TokenSeq spatial = random_spatial(rng, 6, 8);
    QueryWindow w(m);
    std::vector<Tensor> propagated;
    for (int t = 1; t <= 6; ++t) {
      DecodeTrace trace;
      const DecodeResult r = dec.decode(w, t, spatial, &trace);
      CHECK(r.f_temporal.dim(0) == std::min(t, m));
      REQUIRE(trace.windows.size() == 1);
      const Tensor& window = trace.windows[0];
      // window = last min(t,m)-1 propagated queries, then the shared init query
      const int hist = std::min(t, m) - 1;
      for (int i = 0; i < hist; ++i) {
        CHECK(bitwise_equal(slice(window, 0, i, i + 1), propagated[propagated.size() - hist + i]));
      }
      CHECK(bitwise_equal(slice(window, 0, hist, hist + 1), dec.init_query()));
      CHECK_FALSE(r.q_next.requires_grad());
      propagated.push_back(r.q_next);
      w.push(r.q_next);
    }
    if (m == 4) {
      QueryWindow full(4);
      for (int i = 0; i < 3; ++i) full.push(propagated[i]);
      CHECK(dec.decode(full, 4, spatial).f_temporal.dim(0) == 4);
    }
  }
}

TEST_CASE("decode is deterministic") {
  Rng rng(9);
  ParameterStore store;
  TemporalDecoder dec(store, small_decoder(2, 4), rng);
  const TokenSeq spatial = random_spatial(rng, 6, 8);
  QueryWindow w(4);
  w.push(random_tensor(rng, {1, 8}));
  CHECK(bitwise_equal(dec.decode(w, 2, spatial).f_temporal, dec.decode(w, 2, spatial).f_temporal));
}
