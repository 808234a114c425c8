#include <gtest/gtest.h>

#include <cmath>

#include "mmkd/blocks.hpp"
#include "mmkd/ops.hpp"

using namespace mmkd;

namespace {

Tensor randn(std::mt19937_64& rng, Shape shape, bool requires_grad = false) {
  std::normal_distribution<double> d;
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Real>(d(rng));
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

void fill(Tensor t, Real value) {
  for (auto& v : t.mutable_data()) v = value;
}

void expect_row_stochastic(const Tensor& map, double tol) {
  const std::size_t cols = map.shape().back();
  for (std::size_t r = 0; r < map.numel() / cols; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = map[r * cols + c];
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, tol);
  }
}

}  // namespace

TEST(PositionalEmbedding, FirstRowAlternatesZeroOne) {
  const Tensor pe = sinusoidal_pos_emb(5, 8);
  ASSERT_EQ(pe.shape(), (Shape{5, 8}));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_FLOAT_EQ(pe[i], i % 2 == 0 ? 0.0f : 1.0f);
}

TEST(PositionalEmbedding, SecondRowStartsAtSinOne) {
  EXPECT_NEAR(sinusoidal_pos_emb(3, 4)[4], std::sin(1.0), 1e-6);
}

TEST(PositionalEmbedding, Bounded) {
  const Tensor pe = sinusoidal_pos_emb(64, 32);
  for (Real v : pe.data()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Attention, ZeroQueriesGiveUniformMap) {
  Rng rng(1);
  MhaParams p = MhaParams::init(rng, 8, 2);
  fill(p.w_q, 0);
  fill(p.b_q, 0);
  std::mt19937_64 data(2);
  const Tensor x = randn(data, {2, 5, 8});
  const AttentionResult r = multihead_attention(x, x, p);
  for (Real v : r.map.data()) EXPECT_NEAR(v, 1.0 / 5.0, 1e-7);
}

TEST(Attention, SingleQueryIsConvexCombinationOfValues) {
  Rng rng(3);
  MhaParams p = MhaParams::init(rng, 4, 1);
  // Identity value and output projections expose the raw weighted average.
  fill(p.w_v, 0);
  fill(p.w_o, 0);
  for (std::size_t i = 0; i < 4; ++i) {
    p.w_v.mutable_data()[i * 4 + i] = 1;
    p.w_o.mutable_data()[i * 4 + i] = 1;
  }
  std::mt19937_64 data(4);
  const Tensor q = randn(data, {1, 1, 4});
  const Tensor kv = randn(data, {1, 6, 4});
  const AttentionResult r = multihead_attention(q, kv, p);
  for (std::size_t c = 0; c < 4; ++c) {
    double lo = 1e9, hi = -1e9, mix = 0;
    for (std::size_t t = 0; t < 6; ++t) {
      lo = std::min(lo, static_cast<double>(kv[t * 4 + c]));
      hi = std::max(hi, static_cast<double>(kv[t * 4 + c]));
      mix += r.map[t] * kv[t * 4 + c];
    }
    EXPECT_GE(r.out[c], lo - 1e-6);
    EXPECT_LE(r.out[c], hi + 1e-6);
    EXPECT_NEAR(r.out[c], mix, 1e-5);
  }
}

TEST(Attention, RandomInitMapsAreRowStochastic) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const MhaParams p = MhaParams::init(rng, 16, 4);
    std::mt19937_64 data(seed + 100);
    const AttentionResult r = multihead_attention(randn(data, {3, 7, 16}), randn(data, {3, 11, 16}), p);
    ASSERT_EQ(r.map.shape(), (Shape{3, 7, 11}));
    ASSERT_EQ(r.logits.shape(), (Shape{3, 4, 7, 11}));
    expect_row_stochastic(r.map, 1e-6);
  }
}

TEST(Attention, MapAtUnitTemperatureReproducesForwardMap) {
  Rng rng(5);
  const MhaParams p = MhaParams::init(rng, 8, 2);
  std::mt19937_64 data(6);
  const AttentionResult r = multihead_attention(randn(data, {2, 4, 8}), randn(data, {2, 3, 8}), p);
  const Tensor again = attention_map_at(r.logits, 1.0);
  for (std::size_t i = 0; i < r.map.numel(); ++i) EXPECT_EQ(again[i], r.map[i]);
  // Higher temperature flattens every row toward uniform.
  const Tensor flat = attention_map_at(r.logits, 1e6);
  for (Real v : flat.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-5);
}

TEST(Attention, WidthMismatchIsADimensionError) {
  Rng rng(7);
  const MhaParams p = MhaParams::init(rng, 8, 2);
  try {
    multihead_attention(Tensor::zeros({1, 2, 8}), Tensor::zeros({1, 2, 6}), p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Dimension);
  }
}

TEST(Attention, HeadsMustDivideWidth) {
  Rng rng(8);
  EXPECT_THROW(MhaParams::init(rng, 10, 4), Error);
}

TEST(Attention, KeysHaveNoBias) {
  Rng rng(9);
  ParamList params;
  MhaParams::init(rng, 8, 2).collect("", params);
  EXPECT_EQ(params.size(), 7u);
  for (const auto& [name, _] : params) EXPECT_NE(name, "b_k");
}

TEST(TransformerLayer, ZeroBranchesLeaveQueryStreamUnchanged) {
  Rng rng(10);
  TransformerLayerParams p = TransformerLayerParams::init(rng, 8, 2, 4);
  fill(p.mha.w_o, 0);
  fill(p.mha.b_o, 0);
  fill(p.ffn_w2, 0);
  fill(p.ffn_b2, 0);
  std::mt19937_64 data(11);
  const Tensor xq = randn(data, {2, 5, 8});
  const LayerOutput out = transformer_layer(xq, randn(data, {2, 3, 8}), p);
  for (std::size_t i = 0; i < xq.numel(); ++i) EXPECT_EQ(out.y[i], xq[i]);
  expect_row_stochastic(out.trace.map, 1e-6);
}

TEST(TransformerLayer, OutputDependsOnKeyValueStream) {
  Rng rng(12);
  const TransformerLayerParams p = TransformerLayerParams::init(rng, 8, 2, 4);
  std::mt19937_64 data(13);
  const Tensor xq = randn(data, {1, 4, 8});
  const Tensor xkv = randn(data, {1, 6, 8}, true);
  const Tensor y = transformer_layer(xq, xkv, p).y;
  backward(ops::sum(y));
  double norm = 0;
  for (Real g : xkv.grad()) norm += std::abs(g);
  EXPECT_GT(norm, 1e-4);

  // Finite-difference probe on one coordinate agrees in sign and size.
  Tensor shifted = xkv.detach();
  shifted.mutable_data()[3] += 1e-2f;
  const double delta = (ops::sum(transformer_layer(xq, shifted, p).y).item() - ops::sum(y).item()) / 1e-2;
  EXPECT_NEAR(delta, xkv.grad()[3], 0.05 * std::abs(xkv.grad()[3]) + 1e-3);
}

TEST(Stack, SingleLayerStackIsOneLayer) {
  Rng rng(14);
  const std::vector<TransformerLayerParams> layers{TransformerLayerParams::init(rng, 8, 2, 4)};
  std::mt19937_64 data(15);
  const Tensor xq = randn(data, {2, 5, 8});
  const Tensor xkv = randn(data, {2, 3, 8});
  const StackOutput s = stack_forward(xq, xkv, layers);
  const LayerOutput l = transformer_layer(xq, xkv, layers[0]);
  ASSERT_EQ(s.trace.layers(), 1u);
  for (std::size_t i = 0; i < l.y.numel(); ++i) EXPECT_EQ(s.y[i], l.y[i]);
  for (std::size_t i = 0; i < l.trace.map.numel(); ++i) EXPECT_EQ(s.trace.maps[0][i], l.trace.map[i]);
}

TEST(Stack, FourLayersGiveFourTraces) {
  Rng rng(16);
  std::vector<TransformerLayerParams> layers;
  for (int i = 0; i < 4; ++i) layers.push_back(TransformerLayerParams::init(rng, 8, 2, 4));
  std::mt19937_64 data(17);
  const StackOutput s = stack_forward(randn(data, {2, 5, 8}), randn(data, {2, 9, 8}), layers);
  EXPECT_EQ(s.trace.layers(), 4u);
  EXPECT_EQ(s.trace.logits.size(), 4u);
  EXPECT_EQ(s.trace.post_attention.size(), 4u);
  for (const auto& m : s.trace.maps) EXPECT_EQ(m.shape(), (Shape{2, 5, 9}));
  for (const auto& pa : s.trace.post_attention) EXPECT_EQ(pa.shape(), (Shape{2, 5, 8}));
}

TEST(Stack, SelfAttentionMapsAreSquare) {
  Rng rng(18);
  std::vector<TransformerLayerParams> layers;
  for (int i = 0; i < 2; ++i) layers.push_back(TransformerLayerParams::init(rng, 8, 2, 4));
  std::mt19937_64 data(19);
  const StackOutput s = stack_forward(randn(data, {2, 6, 8}), Tensor(), layers);
  for (const auto& m : s.trace.maps) {
    EXPECT_EQ(m.shape(), (Shape{2, 6, 6}));
    expect_row_stochastic(m, 1e-6);
  }
}
