#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "grail/model.hpp"
#include "grail/selectors.hpp"

namespace grail {

struct HeadMeta {
  std::size_t n_heads = 0;
  std::size_t head_dim = 0;
  std::size_t groups = 1;
  std::size_t kept_per_group = 0;
};

/// The width reducer M (H x K) with reduced activations H_red = H M.
///
/// prune: columns are the standard basis vectors e_p of the kept units.
/// fold:  M(h, k) = 1 / |C_k| for h in C_k, zero otherwise.
/// `kept` and `clusters` restate the same structure at feature level.
struct ReducerMap {
  Tensor m;
  DecisionKind kind = DecisionKind::prune;
  std::vector<std::size_t> kept;
  std::vector<std::vector<std::size_t>> clusters;
  std::optional<HeadMeta> head_meta;

  [[nodiscard]] std::size_t width() const { return m.rows(); }
  [[nodiscard]] std::size_t reduced_width() const { return m.cols(); }
};

ReducerMap build_reducer(const SelectionDecision& decision, std::size_t width);

/// Head-level reducer in column convention (n_h x K_h). For grouped-query
/// attention this is blkdiag(R_kv, ..., R_kv).
Tensor head_reducer(const SelectionDecision& decision, std::size_t n_heads, std::size_t groups);

/// Feature-level reducer (R_heads ⊗ I_{d_h}). Throws GqaConstraintError
/// unless every query group makes the same reduction.
ReducerMap lift_heads(const SelectionDecision& decision, std::size_t n_heads, std::size_t head_dim,
                      std::size_t groups);

/// The consumer map a compressor applies without compensation: M itself for
/// pruning, the 0/1 cluster indicator for folding (every channel is replaced
/// by its cluster centroid).
Tensor naive_compensator(const ReducerMap& reducer);

/// Narrows axis 0 of a weight (any rank) or bias: prune gathers rows, fold
/// replaces each cluster by its mean row, i.e. M^T W.
Tensor reduce_rows(const Tensor& w, const SelectionDecision& decision);

struct ProducerWeights {
  Tensor weight;
  Tensor bias;
};

ProducerWeights reduce_producer(const DenseBlock& block, const SelectionDecision& decision);
ProducerWeights reduce_producer(const ConvBlock& block, const SelectionDecision& decision);
ProducerWeights reduce_producer(const FfnBlock& block, const SelectionDecision& decision);

struct AttentionProducer {
  Tensor w_q;
  Tensor w_k;
  Tensor w_v;
  std::size_t n_heads = 0;
};

/// Head-sliced reduction of w_q / w_k / w_v. Query heads follow the head
/// decision; KV heads follow the shared per-group slot reduction.
AttentionProducer reduce_producer(const AttentionBlock& block, const SelectionDecision& decision);

}  // namespace grail
