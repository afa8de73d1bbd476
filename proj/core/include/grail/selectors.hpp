#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "grail/calibration.hpp"
#include "grail/model.hpp"

namespace grail {

enum class DecisionKind { prune, fold };
enum class Unit { channel, head };

/// Which units of a width-H axis survive.
///
/// prune: `kept` is strictly increasing. fold: `clusters` partition [0, H),
/// each sorted, ordered by their smallest member.
struct SelectionDecision {
  DecisionKind kind = DecisionKind::prune;
  Unit unit = Unit::channel;
  std::size_t width = 0;
  std::vector<std::size_t> kept;
  std::vector<std::vector<std::size_t>> clusters;
  std::vector<double> scores;

  static SelectionDecision prune(std::size_t width, std::vector<std::size_t> kept, Unit unit = Unit::channel);
  static SelectionDecision fold(std::size_t width, std::vector<std::vector<std::size_t>> clusters,
                                Unit unit = Unit::channel);

  [[nodiscard]] std::size_t reduced_width() const;
  /// Throws ArgumentError if the invariants above do not hold.
  void validate() const;
};

/// Indices of the k largest scores, ties to the lower index, returned sorted.
std::vector<std::size_t> top_k(const std::vector<double>& scores, std::size_t k);

enum class Norm { l1, l2 };

/// Row scores of the producer weight (any rank; axis 0 is the unit axis).
SelectionDecision select_magnitude(const Tensor& w_producer, std::size_t k, Norm norm);

/// Structured Wanda: score(h) = sum_c |W[h, c]| * input_norms[c]. For conv
/// kernels every spatial tap of input channel c uses input_norms[c].
SelectionDecision select_wanda(const Tensor& w_producer, const Tensor& input_norms, std::size_t k);

/// k-means over producer weight rows.
SelectionDecision select_fold(const Tensor& w_producer, std::size_t k, std::uint64_t seed);

enum class HeadMethod { l2, wanda, fold };

/// Head-level decision. Scores are per-head activation energy (trace of the
/// head's diagonal Gram block); fold clusters heads by their w_o column
/// blocks. With gqa_groups > 1 the same per-group choice is made in every
/// group, so k_heads must be a multiple of gqa_groups.
SelectionDecision select_heads(const AttentionBlock& block, const GramStats& gram, std::size_t k_heads,
                               HeadMethod method, std::uint64_t seed);

}  // namespace grail
