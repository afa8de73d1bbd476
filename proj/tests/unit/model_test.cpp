#include <gtest/gtest.h>

#include "grail/errors.hpp"
#include "grail/linalg.hpp"
#include "grail/model.hpp"
#include "oracles.hpp"

namespace grail {
namespace {

TEST(Activation, Values) {
  EXPECT_EQ(activate(Activation::relu, -1.0), 0.0);
  EXPECT_EQ(activate(Activation::relu, 2.0), 2.0);
  EXPECT_EQ(activate(Activation::identity, -3.0), -3.0);
  for (double x : {-3.0, -0.5, 0.0, 0.7, 4.0}) EXPECT_NEAR(activate(Activation::gelu, x), oracle::gelu(x), 1e-15);
  EXPECT_EQ(parse_activation("gelu"), Activation::gelu);
  EXPECT_THROW((void)parse_activation("tanh"), ArgumentError);
}

TEST(Forward, IdentityDenseChain) {
  DenseBlock b{Tensor::identity(2), Tensor({2}), Activation::identity, Tensor::identity(2), Tensor({2})};
  const BlockGraph graph({2}, {b});
  const auto r = forward(graph, Tensor::matrix({{3, 4}}), Capture{0, TapPoint::hidden});
  EXPECT_EQ(r.output, Tensor::matrix({{3, 4}}));
  EXPECT_EQ(*r.captured, Tensor::matrix({{3, 4}}));
}

TEST(Forward, FfnHiddenMatchesScalarGelu) {
  oracle::Gen g(1);
  const FfnBlock b = oracle::random_ffn(g, 5, 7);
  const BlockGraph graph({5}, {b});
  const Tensor x = g.matrix(4, 5);
  const auto r = forward(graph, x, Capture{0, TapPoint::hidden});
  const Tensor pre = oracle::naive_matmul(x, oracle::naive_transpose(b.w_fc));
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t h = 0; h < 7; ++h)
      EXPECT_NEAR((*r.captured)(n, h), oracle::gelu(pre(n, h) + b.b_fc[h]), 1e-10);
}

TEST(Forward, AttentionCaptureIsConcatenatedHeads) {
  // Identity-padded projections, a single token: each head reads its own
  // two input coordinates.
  AttentionBlock b;
  b.n_heads = 2;
  b.head_dim = 2;
  b.w_q = Tensor::identity(4);
  b.w_k = Tensor::identity(4);
  b.w_v = Tensor::identity(4);
  b.w_o = Tensor::identity(4);
  const BlockGraph graph({4}, {b});
  const Tensor x = Tensor({1, 1, 4}, {0.5, -1.0, 2.0, 3.0});
  const auto r = forward(graph, x, Capture{0, TapPoint::hidden});
  ASSERT_EQ(r.captured->shape(), Shape({1, 4}));
  const Tensor tokens = x.reshaped({1, 4});
  for (std::size_t h = 0; h < 2; ++h) {
    const Tensor head = oracle::single_head(tokens, oracle::head_rows(b.w_q, h, 2), oracle::head_rows(b.w_k, h, 2),
                                            oracle::head_rows(b.w_v, h, 2), false);
    for (std::size_t e = 0; e < 2; ++e) EXPECT_NEAR((*r.captured)(0, h * 2 + e), head[e], 1e-12);
  }
}

void expect_attention_matches_oracle(const AttentionBlock& b, std::uint64_t seed) {
  oracle::Gen g(seed);
  const std::size_t d = b.input_dim(), t = 5, n = 3;
  const BlockGraph graph({d}, {b});
  const Tensor x = g.normal({n, t, d});
  const auto r = forward(graph, x, Capture{0, TapPoint::hidden});
  const std::size_t n_kv = b.kv_heads();
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> seq(x.values().begin() + static_cast<std::ptrdiff_t>(s * t * d),
                            x.values().begin() + static_cast<std::ptrdiff_t>((s + 1) * t * d));
    const Tensor tokens({t, d}, seq);
    Tensor concat({t, b.n_heads * b.head_dim});
    for (std::size_t h = 0; h < b.n_heads; ++h) {
      const std::size_t kv = h % n_kv;
      const Tensor head = oracle::single_head(tokens, oracle::head_rows(b.w_q, h, b.head_dim),
                                              oracle::head_rows(b.w_k, kv, b.head_dim),
                                              oracle::head_rows(b.w_v, kv, b.head_dim), b.causal);
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t e = 0; e < b.head_dim; ++e) {
          const double got = (*r.captured)(s * t + i, h * b.head_dim + e);
          EXPECT_NEAR(got, head(i, e), 1e-10);
          concat(i, h * b.head_dim + e) = head(i, e);
        }
    }
    const Tensor out = oracle::naive_matmul(concat, oracle::naive_transpose(b.w_o));
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t o = 0; o < b.output_dim(); ++o) EXPECT_NEAR(r.output[(s * t + i) * d + o], out(i, o), 1e-10);
  }
}

TEST(Forward, AttentionMatchesPerHeadOracle) {
  oracle::Gen g(2);
  expect_attention_matches_oracle(oracle::random_attention(g, 6, 3, 2), 20);
}

TEST(Forward, CausalAttentionMatchesOracle) {
  oracle::Gen g(3);
  expect_attention_matches_oracle(oracle::random_attention(g, 6, 2, 3, 1, true), 21);
}

TEST(Forward, GroupedQueryAttentionMatchesOracle) {
  oracle::Gen g(4);
  expect_attention_matches_oracle(oracle::random_attention(g, 8, 4, 2, 2), 22);
}

TEST(Forward, EqualKvHeadsMatchStandardAttention) {
  // GQA with shared K/V equals MHA whose K/V heads are copies.
  oracle::Gen g(5);
  AttentionBlock gqa = oracle::random_attention(g, 6, 4, 2, 4);
  AttentionBlock mha = gqa;
  mha.gqa_groups = 1;
  Tensor k({8, 6}), v({8, 6});
  for (std::size_t h = 0; h < 4; ++h)
    for (std::size_t i = 0; i < 12; ++i) {
      k[h * 12 + i] = gqa.w_k[i];
      v[h * 12 + i] = gqa.w_v[i];
    }
  mha.w_k = k;
  mha.w_v = v;
  const Tensor x = g.normal({2, 4, 6});
  const Tensor a = forward(BlockGraph({6}, {gqa}), x);
  const Tensor b = forward(BlockGraph({6}, {mha}), x);
  EXPECT_LE(max_abs_diff(a, b), 1e-8);
}

TEST(Forward, AttentionAcceptsTokenMatrices) {
  oracle::Gen g(6);
  const AttentionBlock b = oracle::random_attention(g, 4, 2, 2);
  const BlockGraph graph({4}, {b});
  const Tensor x = g.matrix(3, 4);
  const Tensor as_tokens = forward(graph, x.reshaped({3, 1, 4}));
  EXPECT_EQ(forward(graph, x).values(), as_tokens.values());
}

TEST(Forward, ConvCaptureIsOneRowPerPosition) {
  oracle::Gen g(7);
  const ConvBlock b = oracle::random_conv(g, 2, 3, 4);
  const BlockGraph graph({2, 5, 5}, {b});
  const Tensor x = g.normal({2, 2, 5, 5});
  const auto r = forward(graph, x, Capture{0, TapPoint::hidden});
  EXPECT_EQ(r.captured->shape(), Shape({2 * 5 * 5, 3}));
  EXPECT_EQ(r.output.shape(), Shape({2, 4, 5, 5}));
  // Row (n=1, y=2, x=3), channel 1, recomputed by hand.
  double s = b.b_producer[1];
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) s += b.w_producer(1, c, ky, kx) * x(1, c, 1 + ky, 2 + kx);
  EXPECT_NEAR((*r.captured)((1 * 5 + 2) * 5 + 3, 1), std::max(s, 0.0), 1e-12);
}

TEST(Forward, OneByOneConvEqualsDense) {
  oracle::Gen g(8);
  ConvBlock c = oracle::random_conv(g, 3, 4, 2, 1, 0);
  DenseBlock d{c.w_producer.reshaped({4, 3}), c.b_producer, c.activation, c.w_consumer.reshaped({2, 4}), c.b_consumer};
  const Tensor x = g.normal({5, 3, 1, 1});
  const Tensor yc = forward(BlockGraph({3, 1, 1}, {c}), x);
  const Tensor yd = forward(BlockGraph({3}, {d}), x.reshaped({5, 3}));
  EXPECT_LE(max_abs_diff(yc.reshaped({5, 2}), yd), 1e-12);
}

TEST(Forward, StridedConvShapes) {
  oracle::Gen g(9);
  ConvBlock c = oracle::random_conv(g, 1, 2, 1);
  c.producer_geometry = {2, 1};
  const BlockGraph graph({1, 7, 7}, {c});
  EXPECT_EQ(forward(graph, g.normal({1, 1, 7, 7})).shape(), Shape({1, 1, 4, 4}));
}

TEST(Forward, Deterministic) {
  oracle::Gen g(10);
  const BlockGraph graph({6}, {oracle::random_dense(g, 6, 8, 5), oracle::random_ffn(g, 5, 9)});
  const Tensor x = g.matrix(7, 6);
  EXPECT_EQ(forward(graph, x), forward(graph, x));
}

TEST(Forward, BlockInputTap) {
  oracle::Gen g(11);
  const DenseBlock a = oracle::random_dense(g, 4, 6, 3);
  const BlockGraph graph({4}, {a, oracle::random_dense(g, 3, 5, 2)});
  const Tensor x = g.matrix(5, 4);
  const auto r = forward(graph, x, Capture{1, TapPoint::block_input});
  EXPECT_EQ(*r.captured, forward(BlockGraph({4}, {a}), x));
  EXPECT_EQ(forward_range(graph, *r.captured, 1, 2), r.output);
}

TEST(Forward, CaptureOutOfRange) {
  oracle::Gen g(12);
  const BlockGraph graph({4}, {oracle::random_dense(g, 4, 6, 3)});
  EXPECT_THROW((void)forward(graph, g.matrix(2, 4), Capture{1, TapPoint::hidden}), ArgumentError);
}

TEST(BlockGraph, RejectsMismatchedChain) {
  oracle::Gen g(13);
  EXPECT_THROW(BlockGraph({4}, {oracle::random_dense(g, 4, 6, 3), oracle::random_dense(g, 4, 6, 3)}),
               DimensionError);
  EXPECT_THROW(BlockGraph({5}, {oracle::random_dense(g, 4, 6, 3)}), DimensionError);
  EXPECT_THROW(BlockGraph({4}, {oracle::random_conv(g, 4, 6, 3)}), DimensionError);
}

TEST(BlockGraph, BatchShapeChecked) {
  oracle::Gen g(14);
  const BlockGraph graph({4}, {oracle::random_dense(g, 4, 6, 3)});
  EXPECT_THROW(graph.check_batch(Tensor({2, 5})), DimensionError);
  EXPECT_NO_THROW(graph.check_batch(Tensor({2, 3, 4})));
}

TEST(BlockGraph, SetBlockRevalidates) {
  oracle::Gen g(15);
  BlockGraph graph({4}, {oracle::random_dense(g, 4, 6, 3)});
  const BlockGraph before = graph;
  EXPECT_THROW(graph.set_block(0, oracle::random_dense(g, 5, 6, 3)), DimensionError);
  EXPECT_EQ(graph, before);
}

TEST(Blocks, ValidateCatchesInconsistentShapes) {
  oracle::Gen g(16);
  DenseBlock d = oracle::random_dense(g, 4, 6, 3);
  d.b_producer = Tensor({5});
  EXPECT_THROW(d.validate(), DimensionError);
  AttentionBlock a = oracle::random_attention(g, 4, 4, 2, 2);
  a.gqa_groups = 3;
  EXPECT_THROW(a.validate(), DimensionError);
  AttentionBlock kv = oracle::random_attention(g, 4, 4, 2, 2);
  kv.w_k = Tensor({8, 4});
  EXPECT_THROW(kv.validate(), DimensionError);
}

}  // namespace
}  // namespace grail
