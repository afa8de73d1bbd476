#pragma once

#include <cstddef>
#include <optional>

#include "grail/calibration.hpp"
#include "grail/model.hpp"
#include "grail/reducers.hpp"
#include "grail/selectors.hpp"

namespace grail {

/// Ridge strength relative to the reduced Gram: lambda = alpha * mean diag(M^T G M).
struct RidgeConfig {
  double alpha = 1e-3;
  /// Absolute lambda (>= 0) used instead of alpha, e.g. 0 for the exact
  /// least-squares solution.
  std::optional<double> lambda;

  /// alpha must lie in (0, 1) unless an absolute lambda is given.
  void validate() const;
  static RidgeConfig absolute(double lambda) { return {1e-3, lambda}; }
};

struct CompensationResult {
  Tensor b;                   // H x K reconstruction map, h ≈ B h_red
  double lambda_used = 0.0;
  double calib_error_before = 0.0;  // ||H W^T - H M (W B_naive)^T||_F on calibration
  double calib_error_after = 0.0;   // same with the merged consumer
  std::size_t block = 0;
  bool compensated = false;
  // Output error of the actual compressed block on the calibration inputs.
  // Equals the modelled errors for pruning; differs for folding through a
  // nonlinearity because the folded producer does not emit exactly H M.
  std::optional<double> realized_error_before;
  std::optional<double> realized_error_after;
};

enum class SolvePath {
  automatic,  // Gram indexing for pruning, GEMMs with M otherwise
  general,    // always form G M and M^T G M
};

/// B = (G M) (M^T G M + lambda I)^{-1}. Only b and lambda_used are set.
/// Throws DegenerateStatsError for statistics without energy and
/// SingularError when the shifted system is not positive definite.
CompensationResult solve_reconstruction(const GramStats& gram, const ReducerMap& reducer, const RidgeConfig& cfg,
                                        SolvePath path = SolvePath::automatic);

/// ||H W^T - H M W_merged^T||_F evaluated from G = H^T H alone.
double consumer_output_error(const Tensor& gram, const Tensor& w_consumer, const Tensor& w_merged,
                             const Tensor& reducer);

struct MergeOptions {
  bool compensate = true;
  std::size_t block_index = 0;
};

template <class BlockT>
struct Compressed {
  BlockT block;  // merged result
  BlockT naive;  // same producer, consumer W B_naive
  CompensationResult result;
};

/// Each merge narrows the producer with the decision and rewrites the
/// consumer as W' = W B (B = naive map when compensation is off). Consumer
/// biases are never modified.
Compressed<DenseBlock> merge_dense(const DenseBlock& block, const SelectionDecision& decision,
                                   const GramStats& gram, const RidgeConfig& cfg, const MergeOptions& opts = {});
/// Contracts the consumer kernel with B over its input-channel axis.
Compressed<ConvBlock> merge_conv(const ConvBlock& block, const SelectionDecision& decision, const GramStats& gram,
                                 const RidgeConfig& cfg, const MergeOptions& opts = {});
Compressed<FfnBlock> merge_ffn(const FfnBlock& block, const SelectionDecision& decision, const GramStats& gram,
                               const RidgeConfig& cfg, const MergeOptions& opts = {});
/// `decision` is head-level; B is solved against the lifted reducer and
/// merged into w_o.
Compressed<AttentionBlock> merge_attention(const AttentionBlock& block, const SelectionDecision& decision,
                                           const GramStats& gram, const RidgeConfig& cfg,
                                           const MergeOptions& opts = {});

Compressed<Block> compress_block(const Block& block, const SelectionDecision& decision, const GramStats& gram,
                                 const RidgeConfig& cfg, const MergeOptions& opts = {});

/// Fills the realized_error fields by running the original, naive and
/// merged blocks on the producer inputs.
void measure_realized(const Block& original, Compressed<Block>& compressed, const Tensor& block_input);

template <class BlockT>
void measure_realized(const BlockT& original, Compressed<BlockT>& compressed, const Tensor& block_input) {
  Compressed<Block> view{compressed.block, compressed.naive, compressed.result};
  measure_realized(Block(original), view, block_input);
  compressed.result = std::move(view.result);
}

/// Conv consumer kernel O x H x kH x kW as a (O*kH*kW) x H matrix and back.
Tensor conv_kernel_as_matrix(const Tensor& kernel);
Tensor conv_kernel_from_matrix(const Tensor& matrix, std::size_t out_channels, std::size_t kh, std::size_t kw);

}  // namespace grail
