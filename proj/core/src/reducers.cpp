#include "grail/reducers.hpp"

#include <algorithm>

#include "grail/errors.hpp"
#include "grail/linalg.hpp"

namespace grail {

namespace {

void check_width(const SelectionDecision& decision, std::size_t width) {
  if (decision.width != width) {
    throw ArgumentError("decision over " + std::to_string(decision.width) + " units applied to width " +
                        std::to_string(width));
  }
  decision.validate();
}

Tensor reducer_matrix(const SelectionDecision& d) {
  Tensor m({d.width, d.reduced_width()});
  if (d.kind == DecisionKind::prune) {
    for (std::size_t k = 0; k < d.kept.size(); ++k) m(d.kept[k], k) = 1.0;
  } else {
    for (std::size_t k = 0; k < d.clusters.size(); ++k) {
      const double w = 1.0 / static_cast<double>(d.clusters[k].size());
      for (auto h : d.clusters[k]) m(h, k) = w;
    }
  }
  return m;
}

// The per-group slot decision shared by every query group.
SelectionDecision slot_decision(const SelectionDecision& d, std::size_t n_heads, std::size_t groups) {
  if (d.unit != Unit::head) throw ArgumentError("head reducer needs a head-level decision");
  check_width(d, n_heads);
  if (groups == 0 || n_heads % groups != 0) {
    throw GqaConstraintError("n_heads " + std::to_string(n_heads) + " not divisible by " +
                             std::to_string(groups) + " groups");
  }
  const std::size_t n_kv = n_heads / groups;
  const std::size_t k = d.reduced_width();
  if (k % groups != 0) {
    throw GqaConstraintError("reduced head count " + std::to_string(k) + " is not divisible by " +
                             std::to_string(groups) + " query groups");
  }
  const std::size_t per_group = k / groups;
  auto violation = [&] {
    return GqaConstraintError("head reduction differs between query groups; grouped-query attention needs the "
                              "same block in every group");
  };

  if (d.kind == DecisionKind::prune) {
    std::vector<std::size_t> slots(d.kept.begin(), d.kept.begin() + static_cast<std::ptrdiff_t>(per_group));
    for (auto s : slots)
      if (s >= n_kv) throw violation();
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t j = 0; j < per_group; ++j)
        if (d.kept[g * per_group + j] != g * n_kv + slots[j]) throw violation();
    return SelectionDecision::prune(n_kv, std::move(slots), Unit::head);
  }

  std::vector<std::vector<std::size_t>> slots(d.clusters.begin(),
                                              d.clusters.begin() + static_cast<std::ptrdiff_t>(per_group));
  for (const auto& c : slots)
    for (auto s : c)
      if (s >= n_kv) throw violation();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t j = 0; j < per_group; ++j) {
      const auto& c = d.clusters[g * per_group + j];
      if (c.size() != slots[j].size()) throw violation();
      for (std::size_t i = 0; i < c.size(); ++i)
        if (c[i] != g * n_kv + slots[j][i]) throw violation();
    }
  return SelectionDecision::fold(n_kv, std::move(slots), Unit::head);
}

}  // namespace

ReducerMap build_reducer(const SelectionDecision& decision, std::size_t width) {
  check_width(decision, width);
  ReducerMap r;
  r.m = reducer_matrix(decision);
  r.kind = decision.kind;
  r.kept = decision.kept;
  r.clusters = decision.clusters;
  return r;
}

Tensor head_reducer(const SelectionDecision& decision, std::size_t n_heads, std::size_t groups) {
  const SelectionDecision slots = slot_decision(decision, n_heads, groups);
  const Tensor r_kv = reducer_matrix(slots);
  const std::vector<Tensor> copies(groups, r_kv);
  return block_diagonal(copies);
}

ReducerMap lift_heads(const SelectionDecision& decision, std::size_t n_heads, std::size_t head_dim,
                      std::size_t groups) {
  if (head_dim == 0) throw ArgumentError("lift_heads: head_dim must be positive");
  const Tensor r_heads = head_reducer(decision, n_heads, groups);

  ReducerMap r;
  r.m = kronecker(r_heads, Tensor::identity(head_dim));
  r.kind = decision.kind;
  r.head_meta = HeadMeta{n_heads, head_dim, groups, decision.reduced_width() / groups};
  if (decision.kind == DecisionKind::prune) {
    for (auto h : decision.kept)
      for (std::size_t e = 0; e < head_dim; ++e) r.kept.push_back(h * head_dim + e);
  } else {
    for (const auto& c : decision.clusters)
      for (std::size_t e = 0; e < head_dim; ++e) {
        std::vector<std::size_t> fc;
        for (auto h : c) fc.push_back(h * head_dim + e);
        r.clusters.push_back(std::move(fc));
      }
  }
  return r;
}

Tensor naive_compensator(const ReducerMap& reducer) {
  if (reducer.kind == DecisionKind::prune) return reducer.m;
  Tensor u = reducer.m;
  for (auto& v : u.data()) v = v != 0.0 ? 1.0 : 0.0;
  return u;
}

Tensor reduce_rows(const Tensor& w, const SelectionDecision& decision) {
  check_width(decision, w.dim(0));
  if (decision.kind == DecisionKind::prune) return gather_rows(w, decision.kept);
  Shape shape = w.shape();
  shape[0] = decision.clusters.size();
  const Tensor mt = transpose(reducer_matrix(decision));
  const Tensor rows = w.rank() == 1 ? w.reshaped({w.dim(0), 1}) : w.as_matrix();
  return matmul(mt, rows).reshaped(shape);
}

ProducerWeights reduce_producer(const DenseBlock& block, const SelectionDecision& decision) {
  return {reduce_rows(block.w_producer, decision), reduce_rows(block.b_producer, decision)};
}

ProducerWeights reduce_producer(const ConvBlock& block, const SelectionDecision& decision) {
  return {reduce_rows(block.w_producer, decision), reduce_rows(block.b_producer, decision)};
}

ProducerWeights reduce_producer(const FfnBlock& block, const SelectionDecision& decision) {
  return {reduce_rows(block.w_fc, decision), reduce_rows(block.b_fc, decision)};
}

AttentionProducer reduce_producer(const AttentionBlock& block, const SelectionDecision& decision) {
  const SelectionDecision slots = slot_decision(decision, block.n_heads, block.gqa_groups);
  const std::size_t d_h = block.head_dim;
  const std::size_t d_model = block.input_dim();

  // Head-row reduction: view (heads x d_h*D), reduce heads, view back.
  auto reduce_heads = [&](const Tensor& w, std::size_t heads, const SelectionDecision& d) {
    const Tensor per_head = w.reshaped({heads, d_h * d_model});
    const Tensor reduced = reduce_rows(per_head, d);
    return reduced.reshaped({reduced.dim(0) * d_h, d_model});
  };
  AttentionProducer p;
  p.w_q = reduce_heads(block.w_q, block.n_heads, decision);
  p.w_k = reduce_heads(block.w_k, block.kv_heads(), slots);
  p.w_v = reduce_heads(block.w_v, block.kv_heads(), slots);
  p.n_heads = decision.reduced_width();
  return p;
}

}  // namespace grail
