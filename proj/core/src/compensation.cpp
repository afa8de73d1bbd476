#include "grail/compensation.hpp"

#include <algorithm>
#include <cmath>

#include "grail/errors.hpp"
#include "grail/linalg.hpp"

namespace grail {

void RidgeConfig::validate() const {
  if (lambda) {
    if (!(*lambda >= 0.0) || !std::isfinite(*lambda)) throw ArgumentError("ridge lambda must be finite and >= 0");
    return;
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ArgumentError("ridge alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
}

CompensationResult solve_reconstruction(const GramStats& gram, const ReducerMap& reducer, const RidgeConfig& cfg,
                                        SolvePath path) {
  cfg.validate();
  const Tensor& g = gram.g;
  const Tensor& m = reducer.m;
  if (g.rank() != 2 || g.rows() != m.rows()) {
    throw DimensionError("Gram " + shape_string(g.shape()) + " does not match reducer " + shape_string(m.shape()));
  }
  if (gram.n_samples == 0) throw DegenerateStatsError("Gram statistics hold no samples");

  Tensor cross;    // G M, H x K
  Tensor reduced;  // M^T G M, K x K
  if (path == SolvePath::automatic && reducer.kind == DecisionKind::prune) {
    cross = gather_columns(g, reducer.kept);
    reduced = gather_rows(cross, reducer.kept);
  } else {
    cross = matmul(g, m);
    reduced = matmul_tn(m, cross);
    for (std::size_t i = 0; i < reduced.rows(); ++i)
      for (std::size_t j = 0; j < i; ++j) {
        const double s = 0.5 * (reduced(i, j) + reduced(j, i));
        reduced(i, j) = s;
        reduced(j, i) = s;
      }
  }

  const std::size_t k = reduced.rows();
  double diag_sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) diag_sum += reduced(i, i);
  if (!(diag_sum > 0.0)) {
    throw DegenerateStatsError("reduced Gram has zero energy: every retained channel is dead on the calibration set");
  }

  CompensationResult result;
  result.lambda_used = cfg.lambda ? *cfg.lambda : cfg.alpha * diag_sum / static_cast<double>(k);
  try {
    const Tensor x = spd_solve(SpdSystem(std::move(reduced), transpose(cross)), result.lambda_used);
    result.b = transpose(x);
  } catch (const SingularError& e) {
    throw SingularError(std::string(e.what()) + "; increase alpha");
  }
  result.compensated = true;
  return result;
}

double consumer_output_error(const Tensor& gram, const Tensor& w_consumer, const Tensor& w_merged,
                             const Tensor& reducer) {
  const Tensor d = w_consumer - matmul(w_merged, transpose(reducer));
  const Tensor dg = matmul(d, gram);
  double s = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) s += d[i] * dg[i];
  return std::sqrt(std::max(0.0, s));
}

Tensor conv_kernel_as_matrix(const Tensor& kernel) {
  const std::size_t o = kernel.dim(0), h = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  Tensor m({o * kh * kw, h});
  for (std::size_t a = 0; a < o; ++a)
    for (std::size_t c = 0; c < h; ++c)
      for (std::size_t y = 0; y < kh; ++y)
        for (std::size_t x = 0; x < kw; ++x) m((a * kh + y) * kw + x, c) = kernel(a, c, y, x);
  return m;
}

Tensor conv_kernel_from_matrix(const Tensor& matrix, std::size_t out_channels, std::size_t kh, std::size_t kw) {
  const std::size_t h = matrix.cols();
  if (matrix.rows() != out_channels * kh * kw) {
    throw DimensionError("kernel matrix " + shape_string(matrix.shape()) + " does not fit " +
                         std::to_string(out_channels) + " x " + std::to_string(kh) + " x " + std::to_string(kw));
  }
  Tensor k({out_channels, h, kh, kw});
  for (std::size_t a = 0; a < out_channels; ++a)
    for (std::size_t c = 0; c < h; ++c)
      for (std::size_t y = 0; y < kh; ++y)
        for (std::size_t x = 0; x < kw; ++x) k(a, c, y, x) = matrix((a * kh + y) * kw + x, c);
  return k;
}

namespace {

struct ConsumerMerge {
  Tensor merged;
  Tensor naive;
  CompensationResult result;
};

ConsumerMerge merge_consumer(const Tensor& w, const ReducerMap& reducer, const GramStats& gram,
                             const RidgeConfig& cfg, const MergeOptions& opts) {
  if (gram.g.rank() != 2 || gram.width() != w.cols()) {
    throw DimensionError("Gram " + shape_string(gram.g.shape()) + " does not match consumer " +
                         shape_string(w.shape()));
  }
  ConsumerMerge out;
  out.naive = matmul(w, naive_compensator(reducer));
  const double before = consumer_output_error(gram.g, w, out.naive, reducer.m);
  try {
    if (opts.compensate) {
      out.result = solve_reconstruction(gram, reducer, cfg);
      out.merged = matmul(w, out.result.b);
      out.result.calib_error_after = consumer_output_error(gram.g, w, out.merged, reducer.m);
    } else {
      out.result.b = naive_compensator(reducer);
      out.merged = out.naive;
      out.result.calib_error_after = before;
    }
  } catch (NumericalError& e) {
    e.set_block(opts.block_index);
    throw;
  }
  out.result.calib_error_before = before;
  out.result.block = opts.block_index;
  return out;
}

}  // namespace

void measure_realized(const Block& original, Compressed<Block>& compressed, const Tensor& block_input) {
  const Tensor reference = block_forward(original, block_input);
  const double before = frobenius_norm(reference - block_forward(compressed.naive, block_input));
  compressed.result.realized_error_before = before;
  compressed.result.realized_error_after =
      compressed.result.compensated ? frobenius_norm(reference - block_forward(compressed.block, block_input))
                                    : before;
}

Compressed<DenseBlock> merge_dense(const DenseBlock& block, const SelectionDecision& decision,
                                   const GramStats& gram, const RidgeConfig& cfg, const MergeOptions& opts) {
  const ReducerMap reducer = build_reducer(decision, block.hidden_dim());
  ConsumerMerge cm = merge_consumer(block.w_consumer, reducer, gram, cfg, opts);
  const ProducerWeights p = reduce_producer(block, decision);
  auto make = [&](Tensor consumer) {
    return DenseBlock{p.weight, p.bias, block.activation, std::move(consumer), block.b_consumer};
  };
  return {make(std::move(cm.merged)), make(std::move(cm.naive)), std::move(cm.result)};
}

Compressed<ConvBlock> merge_conv(const ConvBlock& block, const SelectionDecision& decision, const GramStats& gram,
                                 const RidgeConfig& cfg, const MergeOptions& opts) {
  const ReducerMap reducer = build_reducer(decision, block.hidden_dim());
  const std::size_t o = block.w_consumer.dim(0);
  const std::size_t kh = block.w_consumer.dim(2);
  const std::size_t kw = block.w_consumer.dim(3);
  ConsumerMerge cm = merge_consumer(conv_kernel_as_matrix(block.w_consumer), reducer, gram, cfg, opts);
  const ProducerWeights p = reduce_producer(block, decision);
  auto make = [&](const Tensor& consumer) {
    return ConvBlock{p.weight,
                     p.bias,
                     block.activation,
                     conv_kernel_from_matrix(consumer, o, kh, kw),
                     block.b_consumer,
                     block.producer_geometry,
                     block.consumer_geometry};
  };
  return {make(cm.merged), make(cm.naive), std::move(cm.result)};
}

Compressed<FfnBlock> merge_ffn(const FfnBlock& block, const SelectionDecision& decision, const GramStats& gram,
                               const RidgeConfig& cfg, const MergeOptions& opts) {
  const ReducerMap reducer = build_reducer(decision, block.hidden_dim());
  ConsumerMerge cm = merge_consumer(block.w_proj, reducer, gram, cfg, opts);
  const ProducerWeights p = reduce_producer(block, decision);
  auto make = [&](Tensor proj) { return FfnBlock{p.weight, p.bias, block.activation, std::move(proj), block.b_proj}; };
  return {make(std::move(cm.merged)), make(std::move(cm.naive)), std::move(cm.result)};
}

Compressed<AttentionBlock> merge_attention(const AttentionBlock& block, const SelectionDecision& decision,
                                           const GramStats& gram, const RidgeConfig& cfg,
                                           const MergeOptions& opts) {
  const ReducerMap reducer = lift_heads(decision, block.n_heads, block.head_dim, block.gqa_groups);
  ConsumerMerge cm = merge_consumer(block.w_o, reducer, gram, cfg, opts);
  const AttentionProducer p = reduce_producer(block, decision);
  auto make = [&](Tensor w_o) {
    return AttentionBlock{p.w_q,  p.w_k,           p.w_v,           std::move(w_o),
                          p.n_heads, block.head_dim, block.gqa_groups, block.causal};
  };
  return {make(std::move(cm.merged)), make(std::move(cm.naive)), std::move(cm.result)};
}

Compressed<Block> compress_block(const Block& block, const SelectionDecision& decision, const GramStats& gram,
                                 const RidgeConfig& cfg, const MergeOptions& opts) {
  return std::visit(
      [&](const auto& b) -> Compressed<Block> {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, DenseBlock>) {
          auto c = merge_dense(b, decision, gram, cfg, opts);
          return {std::move(c.block), std::move(c.naive), std::move(c.result)};
        } else if constexpr (std::is_same_v<T, ConvBlock>) {
          auto c = merge_conv(b, decision, gram, cfg, opts);
          return {std::move(c.block), std::move(c.naive), std::move(c.result)};
        } else if constexpr (std::is_same_v<T, FfnBlock>) {
          auto c = merge_ffn(b, decision, gram, cfg, opts);
          return {std::move(c.block), std::move(c.naive), std::move(c.result)};
        } else {
          auto c = merge_attention(b, decision, gram, cfg, opts);
          return {std::move(c.block), std::move(c.naive), std::move(c.result)};
        }
      },
      block);
}

}  // namespace grail
