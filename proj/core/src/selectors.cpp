#include "grail/selectors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "grail/errors.hpp"
#include "grail/linalg.hpp"

namespace grail {

namespace {

void check_k(std::size_t k, std::size_t width, const char* what) {
  if (k < 1 || k > width) {
    throw ArgumentError(std::string(what) + ": target count " + std::to_string(k) + " outside [1, " +
                        std::to_string(width) + "]");
  }
}

std::vector<std::vector<std::size_t>> clusters_from(const std::vector<std::size_t>& assignment, std::size_t k) {
  std::vector<std::vector<std::size_t>> clusters(k);
  for (std::size_t i = 0; i < assignment.size(); ++i) clusters[assignment[i]].push_back(i);
  std::ranges::sort(clusters, {}, [](const auto& c) { return c.front(); });
  return clusters;
}

}  // namespace

SelectionDecision SelectionDecision::prune(std::size_t width, std::vector<std::size_t> kept, Unit unit) {
  SelectionDecision d;
  d.kind = DecisionKind::prune;
  d.unit = unit;
  d.width = width;
  d.kept = std::move(kept);
  d.validate();
  return d;
}

SelectionDecision SelectionDecision::fold(std::size_t width, std::vector<std::vector<std::size_t>> clusters,
                                          Unit unit) {
  SelectionDecision d;
  d.kind = DecisionKind::fold;
  d.unit = unit;
  d.width = width;
  for (auto& c : clusters) std::ranges::sort(c);
  std::ranges::sort(clusters, {}, [](const auto& c) { return c.empty() ? 0 : c.front(); });
  d.clusters = std::move(clusters);
  d.validate();
  return d;
}

std::size_t SelectionDecision::reduced_width() const {
  return kind == DecisionKind::prune ? kept.size() : clusters.size();
}

void SelectionDecision::validate() const {
  if (width == 0) throw ArgumentError("selection over an empty axis");
  if (kind == DecisionKind::prune) {
    if (kept.empty()) throw ArgumentError("prune decision keeps no units");
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (kept[i] >= width) {
        throw ArgumentError("kept index " + std::to_string(kept[i]) + " out of range for width " +
                            std::to_string(width));
      }
      if (i > 0 && kept[i] <= kept[i - 1]) throw ArgumentError("kept indices must be strictly increasing");
    }
    return;
  }
  if (clusters.empty()) throw ArgumentError("fold decision has no clusters");
  std::vector<bool> seen(width, false);
  std::size_t total = 0;
  for (const auto& c : clusters) {
    if (c.empty()) throw ArgumentError("fold decision has an empty cluster");
    for (auto h : c) {
      if (h >= width) throw ArgumentError("cluster member " + std::to_string(h) + " out of range");
      if (seen[h]) throw ArgumentError("clusters overlap at unit " + std::to_string(h));
      seen[h] = true;
      ++total;
    }
  }
  if (total != width) throw ArgumentError("clusters do not cover every unit");
}

std::vector<std::size_t> top_k(const std::vector<double>& scores, std::size_t k) {
  check_k(k, scores.size(), "top_k");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  std::ranges::sort(order);
  return order;
}

SelectionDecision select_magnitude(const Tensor& w_producer, std::size_t k, Norm norm) {
  const Tensor w = w_producer.as_matrix();
  check_k(k, w.rows(), "select_magnitude");
  std::vector<double> scores(w.rows(), 0.0);
  for (std::size_t h = 0; h < w.rows(); ++h) {
    for (double v : w.row(h)) scores[h] += norm == Norm::l1 ? std::abs(v) : v * v;
    if (norm == Norm::l2) scores[h] = std::sqrt(scores[h]);
  }
  auto d = SelectionDecision::prune(w.rows(), top_k(scores, k));
  d.scores = std::move(scores);
  return d;
}

SelectionDecision select_wanda(const Tensor& w_producer, const Tensor& input_norms, std::size_t k) {
  const Tensor w = w_producer.as_matrix();
  const std::size_t in_channels = w_producer.rank() >= 2 ? w_producer.dim(1) : w.cols();
  if (input_norms.rank() != 1 || input_norms.size() != in_channels) {
    throw DimensionError("select_wanda: input norms " + shape_string(input_norms.shape()) +
                         " do not match producer " + shape_string(w_producer.shape()));
  }
  check_k(k, w.rows(), "select_wanda");
  const std::size_t taps = w.cols() / in_channels;
  std::vector<double> scores(w.rows(), 0.0);
  for (std::size_t h = 0; h < w.rows(); ++h) {
    const auto row = w.row(h);
    for (std::size_t c = 0; c < row.size(); ++c) scores[h] += std::abs(row[c]) * input_norms[c / taps];
  }
  auto d = SelectionDecision::prune(w.rows(), top_k(scores, k));
  d.scores = std::move(scores);
  return d;
}

SelectionDecision select_fold(const Tensor& w_producer, std::size_t k, std::uint64_t seed) {
  const Tensor w = w_producer.as_matrix();
  check_k(k, w.rows(), "select_fold");
  const KMeansResult km = kmeans(w, k, seed);
  auto d = SelectionDecision::fold(w.rows(), clusters_from(km.assignment, k));
  d.scores.assign(w.rows(), 0.0);
  for (std::size_t h = 0; h < w.rows(); ++h) {
    for (double v : w.row(h)) d.scores[h] += v * v;
    d.scores[h] = std::sqrt(d.scores[h]);
  }
  return d;
}

SelectionDecision select_heads(const AttentionBlock& block, const GramStats& gram, std::size_t k_heads,
                               HeadMethod method, std::uint64_t seed) {
  const std::size_t n_h = block.n_heads;
  const std::size_t d_h = block.head_dim;
  const std::size_t groups = block.gqa_groups;
  const std::size_t n_kv = block.kv_heads();
  check_k(k_heads, n_h, "select_heads");
  if (k_heads % groups != 0) {
    throw GqaConstraintError("select_heads: keeping " + std::to_string(k_heads) + " of " + std::to_string(n_h) +
                             " heads is not divisible by the " + std::to_string(groups) + " query groups");
  }
  if (gram.width() != n_h * d_h) {
    throw DimensionError("select_heads: Gram width " + std::to_string(gram.width()) + " != n_heads*head_dim " +
                         std::to_string(n_h * d_h));
  }
  const std::size_t k_kv = k_heads / groups;

  std::vector<double> energy(n_h, 0.0);
  for (std::size_t h = 0; h < n_h; ++h)
    for (std::size_t e = 0; e < d_h; ++e) energy[h] += gram.g(h * d_h + e, h * d_h + e);

  if (method == HeadMethod::fold) {
    // One row per KV slot: the w_o column blocks of its heads in every group.
    const std::size_t d_out = block.w_o.rows();
    Tensor features({n_kv, groups * d_out * d_h});
    for (std::size_t j = 0; j < n_kv; ++j) {
      std::size_t col = 0;
      for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t head = g * n_kv + j;
        for (std::size_t o = 0; o < d_out; ++o)
          for (std::size_t e = 0; e < d_h; ++e) features(j, col++) = block.w_o(o, head * d_h + e);
      }
    }
    const KMeansResult km = kmeans(features, k_kv, seed);
    const auto slot_clusters = clusters_from(km.assignment, k_kv);
    std::vector<std::vector<std::size_t>> clusters;
    for (std::size_t g = 0; g < groups; ++g)
      for (const auto& sc : slot_clusters) {
        std::vector<std::size_t> c;
        for (auto j : sc) c.push_back(g * n_kv + j);
        clusters.push_back(std::move(c));
      }
    auto d = SelectionDecision::fold(n_h, std::move(clusters), Unit::head);
    d.scores = std::move(energy);
    return d;
  }

  std::vector<double> slot_score(n_kv, 0.0);
  for (std::size_t h = 0; h < n_h; ++h) slot_score[h % n_kv] += energy[h];
  const auto slots = top_k(slot_score, k_kv);
  std::vector<std::size_t> kept;
  for (std::size_t g = 0; g < groups; ++g)
    for (auto j : slots) kept.push_back(g * n_kv + j);
  auto d = SelectionDecision::prune(n_h, std::move(kept), Unit::head);
  d.scores = std::move(energy);
  return d;
}

}  // namespace grail
