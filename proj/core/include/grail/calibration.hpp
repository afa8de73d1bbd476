#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "grail/model.hpp"

namespace grail {

struct Tap {
  std::size_t block = 0;
  TapPoint point = TapPoint::hidden;
  friend bool operator==(const Tap&, const Tap&) = default;
};

/// Uncentered second moment G = sum_n x_n x_n^T of activations at a tap.
struct GramStats {
  Tensor g;                    // H x H, exactly symmetric
  std::uint64_t n_samples = 0;  // activation rows, not batch items
  Tap tap;

  [[nodiscard]] std::size_t width() const { return g.rows(); }
};

/// Rows are accumulated in fixed chunks of this many samples.
inline constexpr std::size_t kGramChunkRows = 256;

/// Accumulates rows^T rows, computing the upper triangle and mirroring it.
GramStats gram_from_rows(const Tensor& rows, Tap tap = {});

/// Identity element for merge_gram.
GramStats zero_gram(std::size_t width, Tap tap = {});

/// Runs the graph on `batch` and accumulates the Gram at the consumer input
/// of `block`.
GramStats accumulate_gram(const BlockGraph& graph, const Tensor& batch, std::size_t block);

/// Sums two statistics taken at the same tap.
GramStats merge_gram(const GramStats& a, const GramStats& b);

/// Column l2 norms of a (samples x features) matrix.
Tensor column_norms(const Tensor& rows);

/// Per-feature l2 norms of the producer's input activations of `block`.
Tensor input_feature_norms(const BlockGraph& graph, const Tensor& batch, std::size_t block);

/// Sequential recalibration over planned blocks.
///
/// Each call to next() returns the statistics of the next planned block,
/// measured on a graph where every earlier planned block has been replaced
/// by whatever was passed to commit(). Activations are carried forward, so
/// the whole plan costs roughly one forward pass plus one pass per rewritten
/// block.
class ClosedLoopCalibrator {
 public:
  /// `plan` must list distinct block indices in ascending order.
  ClosedLoopCalibrator(BlockGraph graph, Tensor batch, std::vector<std::size_t> plan);

  [[nodiscard]] bool done() const { return cursor_ == plan_.size(); }
  /// Block index next() will return statistics for.
  [[nodiscard]] std::size_t upcoming_block() const;

  GramStats next();

  /// Input activations of the block most recently returned by next(), in the
  /// block's native layout (N x C, N x T x C, or N x C x H x W).
  [[nodiscard]] const Tensor& block_input() const { return x_; }

  /// Replaces the block most recently returned by next(). Skipping commit()
  /// leaves the original block in place.
  void commit(Block replacement);

  [[nodiscard]] const BlockGraph& graph() const { return graph_; }

 private:
  void advance_to(std::size_t block);

  BlockGraph graph_;
  Tensor x_;
  std::size_t position_ = 0;  // block that x_ feeds
  std::vector<std::size_t> plan_;
  std::size_t cursor_ = 0;
  bool pending_ = false;
};

/// Callback form of the closed loop: `rewrite` may return a replacement for
/// each planned block. Returns the statistics in plan order.
using BlockRewriter =
    std::function<std::optional<Block>(std::size_t block, const GramStats& stats, const Tensor& block_input)>;
std::vector<GramStats> closed_loop_pass(const BlockGraph& graph, const Tensor& batch,
                                        const std::vector<std::size_t>& plan, const BlockRewriter& rewrite);

// Gram dumps (.grlg): "GRLG", u32 version = 1, u32 H, u64 n_samples, H*H
// float64 LE values row-major.
std::vector<std::uint8_t> encode_gram(const GramStats& stats);
GramStats decode_gram(const std::vector<std::uint8_t>& bytes);
void save_gram(const GramStats& stats, const std::filesystem::path& path);
GramStats load_gram(const std::filesystem::path& path);

}  // namespace grail
