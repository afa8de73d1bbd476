#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>

#include "grail/calibration.hpp"
#include "grail/compensation.hpp"
#include "grail/errors.hpp"
#include "grail/linalg.hpp"
#include "grail/selectors.hpp"
#include "oracles.hpp"

namespace grail {
namespace {

TEST(Gram, OrthonormalRows) {
  const GramStats s = gram_from_rows(Tensor::matrix({{1, 0}, {0, 1}}));
  EXPECT_EQ(s.g, Tensor::identity(2));
  EXPECT_EQ(s.n_samples, 2u);
}

TEST(Gram, RankOneOuterProduct) {
  const GramStats s = gram_from_rows(Tensor::matrix({{2, 1}}));
  EXPECT_EQ(s.g, Tensor::matrix({{4, 2}, {2, 1}}));
  EXPECT_EQ(s.n_samples, 1u);
}

TEST(Gram, MatchesDenseOracle) {
  oracle::Gen g(1);
  const Tensor x = g.matrix(600, 8);
  const GramStats s = gram_from_rows(x);
  EXPECT_LE(oracle::rel_diff(s.g, oracle::naive_matmul(oracle::naive_transpose(x), x)), 1e-9);
}

TEST(Gram, ExactlySymmetricPsdAndTraceMatches) {
  oracle::Gen g(2);
  for (int t = 0; t < 10; ++t) {
    const std::size_t h = 2 + g.index(6);
    const Tensor x = g.matrix(1 + g.index(700), h);
    const GramStats s = gram_from_rows(x);
    double trace = 0.0, energy = 0.0;
    for (std::size_t i = 0; i < h; ++i) {
      trace += s.g(i, i);
      for (std::size_t j = 0; j < h; ++j) EXPECT_EQ(s.g(i, j), s.g(j, i));
    }
    for (double v : x.data()) energy += v * v;
    EXPECT_NEAR(trace, energy, 1e-9 * energy);
    // PSD spot check: v^T G v >= -tol for random directions.
    for (int k = 0; k < 20; ++k) {
      const Tensor v = g.matrix(h, 1);
      const Tensor q = matmul(transpose(v), matmul(s.g, v));
      EXPECT_GE(q[0], -1e-8 * trace / static_cast<double>(h));
    }
  }
}

TEST(Gram, WhitenedActivationsApproachIdentity) {
  oracle::Gen g(3);
  const std::size_t n = 10000;
  const GramStats s = gram_from_rows(g.matrix(n, 8));
  double worst = 0.0;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      if (i != j) worst = std::max(worst, std::abs(s.g(i, j) / static_cast<double>(n)));
  EXPECT_LE(worst, 5.0 / std::sqrt(static_cast<double>(n)));
}

TEST(MergeGram, ZeroIsIdentity) {
  oracle::Gen g(4);
  const GramStats s = gram_from_rows(g.matrix(20, 5));
  const GramStats m = merge_gram(s, zero_gram(5));
  EXPECT_EQ(m.g, s.g);
  EXPECT_EQ(m.n_samples, s.n_samples);
}

TEST(MergeGram, ChunksMatchSinglePass) {
  oracle::Gen g(5);
  const Tensor x = g.matrix(1000, 6);
  GramStats acc = zero_gram(6);
  for (std::size_t c = 0; c < 4; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t r = c * 250; r < (c + 1) * 250; ++r) rows.push_back(r);
    acc = merge_gram(acc, gram_from_rows(gather_rows(x, rows)));
  }
  const GramStats whole = gram_from_rows(x);
  EXPECT_LE(oracle::rel_diff(acc.g, whole.g), 1e-10);
  EXPECT_EQ(acc.n_samples, 1000u);
}

TEST(MergeGram, Commutative) {
  oracle::Gen g(6);
  const GramStats a = gram_from_rows(g.matrix(30, 4));
  const GramStats b = gram_from_rows(g.matrix(50, 4));
  EXPECT_LE(oracle::rel_diff(merge_gram(a, b).g, merge_gram(b, a).g), 1e-10);
}

TEST(MergeGram, Mismatches) {
  EXPECT_THROW((void)merge_gram(zero_gram(3), zero_gram(4)), DimensionError);
  EXPECT_THROW((void)merge_gram(zero_gram(3, Tap{0}), zero_gram(3, Tap{1})), ArgumentError);
}

TEST(AccumulateGram, CountsTokensAndPositions) {
  oracle::Gen g(7);
  const BlockGraph attn({4}, {oracle::random_attention(g, 4, 2, 2)});
  const GramStats a = accumulate_gram(attn, g.normal({3, 5, 4}), 0);
  EXPECT_EQ(a.n_samples, 15u);
  EXPECT_EQ(a.width(), 4u);
  const BlockGraph conv({2, 4, 4}, {oracle::random_conv(g, 2, 3, 2)});
  const GramStats c = accumulate_gram(conv, g.normal({2, 2, 4, 4}), 0);
  EXPECT_EQ(c.n_samples, 32u);
  EXPECT_EQ(c.width(), 3u);
}

TEST(AccumulateGram, MatchesCapturedActivations) {
  oracle::Gen g(8);
  const BlockGraph graph({5}, {oracle::random_dense(g, 5, 7, 4), oracle::random_ffn(g, 4, 9)});
  const Tensor x = g.matrix(40, 5);
  const auto captured = *forward(graph, x, Capture{1, TapPoint::hidden}).captured;
  const GramStats s = accumulate_gram(graph, x, 1);
  EXPECT_LE(oracle::rel_diff(s.g, oracle::naive_matmul(oracle::naive_transpose(captured), captured)), 1e-12);
  EXPECT_EQ(s.tap.block, 1u);
}

TEST(AccumulateGram, RejectsEmptyOrMisshapenBatch) {
  oracle::Gen g(9);
  const BlockGraph graph({5}, {oracle::random_dense(g, 5, 7, 4)});
  EXPECT_THROW((void)accumulate_gram(graph, Tensor(), 0), ArgumentError);
  EXPECT_THROW((void)accumulate_gram(graph, g.matrix(3, 4), 0), DimensionError);
}

TEST(InputNorms, Values) {
  oracle::Gen g(10);
  const BlockGraph graph({2}, {oracle::random_dense(g, 2, 3, 2)});
  const Tensor n = input_feature_norms(graph, Tensor::matrix({{1, 0}, {1, 0}}), 0);
  EXPECT_NEAR(n[0], std::sqrt(2.0), 1e-15);
  EXPECT_EQ(n[1], 0.0);
  const Tensor zeros = input_feature_norms(graph, Tensor({3, 2}), 0);
  EXPECT_EQ(zeros, Tensor({2}));
}

TEST(InputNorms, MatchesColumnNormOracleOnSecondBlock) {
  oracle::Gen g(11);
  const BlockGraph graph({5}, {oracle::random_dense(g, 5, 7, 4), oracle::random_dense(g, 4, 6, 2)});
  const Tensor x = g.matrix(30, 5);
  const Tensor in = forward(BlockGraph({5}, {graph.block(0)}), x);
  const Tensor n = input_feature_norms(graph, x, 1);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < 30; ++r) s += in(r, c) * in(r, c);
    EXPECT_NEAR(n[c], std::sqrt(s), 1e-12);
  }
}

TEST(ClosedLoop, SingleBlockPlanEqualsAccumulate) {
  oracle::Gen g(12);
  const BlockGraph graph({5}, {oracle::random_dense(g, 5, 7, 4), oracle::random_dense(g, 4, 6, 2)});
  const Tensor x = g.matrix(30, 5);
  ClosedLoopCalibrator cal(graph, x, {1});
  const GramStats s = cal.next();
  EXPECT_EQ(s.g, accumulate_gram(graph, x, 1).g);
  EXPECT_TRUE(cal.done());
}

TEST(ClosedLoop, IdentityUpstreamCompressionKeepsStats) {
  oracle::Gen g(13);
  const BlockGraph graph({5}, {oracle::random_dense(g, 5, 7, 4), oracle::random_dense(g, 4, 6, 2)});
  const Tensor x = g.matrix(64, 5);
  std::vector<std::size_t> all = {0, 1, 2, 3, 4, 5, 6};
  const auto stats = closed_loop_pass(graph, x, {0, 1}, [&](std::size_t b, const GramStats& s, const Tensor&) {
    std::optional<Block> out;
    if (b == 0) {
      out = merge_dense(std::get<DenseBlock>(graph.block(0)), SelectionDecision::prune(7, all), s,
                        RidgeConfig{1e-8, std::nullopt})
                .block;
    }
    return out;
  });
  ASSERT_EQ(stats.size(), 2u);
  EXPECT_LE(oracle::rel_diff(stats[1].g, accumulate_gram(graph, x, 1).g), 1e-6);
}

TEST(ClosedLoop, MatchesManualTwoPhase) {
  oracle::Gen g(14);
  const BlockGraph graph({5}, {oracle::random_dense(g, 5, 8, 4), oracle::random_ffn(g, 4, 6)});
  const Tensor x = g.matrix(64, 5);
  const SelectionDecision half = SelectionDecision::prune(8, {0, 2, 5, 7});
  DenseBlock compressed;
  const auto stats = closed_loop_pass(graph, x, {0, 1}, [&](std::size_t b, const GramStats& s, const Tensor&) {
    std::optional<Block> out;
    if (b == 0) {
      compressed = merge_dense(std::get<DenseBlock>(graph.block(0)), half, s, RidgeConfig{}).block;
      out = compressed;
    }
    return out;
  });
  BlockGraph manual = graph;
  manual.set_block(0, compressed);
  EXPECT_LE(oracle::rel_diff(stats[1].g, accumulate_gram(manual, x, 1).g), 1e-12);
  EXPECT_GT(oracle::rel_diff(stats[1].g, accumulate_gram(graph, x, 1).g), 1e-6);
}

TEST(ClosedLoop, SkipsUnplannedBlocksAndExposesInputs) {
  oracle::Gen g(15);
  const BlockGraph graph({5}, {oracle::random_dense(g, 5, 7, 4), oracle::random_dense(g, 4, 6, 3),
                               oracle::random_dense(g, 3, 5, 2)});
  const Tensor x = g.matrix(20, 5);
  ClosedLoopCalibrator cal(graph, x, {0, 2});
  EXPECT_EQ(cal.upcoming_block(), 0u);
  (void)cal.next();
  EXPECT_EQ(cal.block_input(), x);
  const GramStats s2 = cal.next();
  EXPECT_EQ(s2.tap.block, 2u);
  EXPECT_LE(max_abs_diff(cal.block_input(), forward_range(graph, x, 0, 2)), 0.0);
  EXPECT_THROW(ClosedLoopCalibrator(graph, x, {2, 0}), ArgumentError);
  EXPECT_THROW(ClosedLoopCalibrator(graph, x, {3}), ArgumentError);
}

TEST(GramIo, RoundTripBitExact) {
  oracle::Gen g(16);
  GramStats s = gram_from_rows(g.matrix(50, 6), Tap{3, TapPoint::hidden});
  const auto bytes = encode_gram(s);
  EXPECT_EQ(bytes.size(), 4 + 4 + 4 + 8 + 36 * 8u);
  const GramStats back = decode_gram(bytes);
  EXPECT_EQ(back.g, s.g);
  EXPECT_EQ(back.n_samples, 50u);
  const auto path = std::filesystem::temp_directory_path() / ("grail_gram_" + std::to_string(::getpid()) + ".grlg");
  save_gram(s, path);
  EXPECT_EQ(load_gram(path).g, s.g);
  std::filesystem::remove(path);
}

TEST(GramIo, CorruptHeaders) {
  const auto bytes = encode_gram(gram_from_rows(Tensor::matrix({{1, 2}})));
  auto magic = bytes;
  magic[0] = 'Q';
  EXPECT_THROW((void)decode_gram(magic), BadMagicError);
  auto version = bytes;
  version[4] = 3;
  EXPECT_THROW((void)decode_gram(version), VersionError);
  auto shorter = bytes;
  shorter.pop_back();
  EXPECT_THROW((void)decode_gram(shorter), TruncatedError);
}

}  // namespace
}  // namespace grail
