#include "grail/calibration.hpp"

#include <algorithm>
#include <cmath>

#include "byte_io.hpp"
#include "grail/errors.hpp"

namespace grail {

GramStats gram_from_rows(const Tensor& rows, Tap tap) {
  if (rows.rank() != 2) throw DimensionError("gram_from_rows expects a matrix, got " + shape_string(rows.shape()));
  const std::size_t n = rows.rows();
  const std::size_t h = rows.cols();
  std::vector<double> total(h * h, 0.0);
  std::vector<double> chunk(h * h, 0.0);

  for (std::size_t start = 0; start < n; start += kGramChunkRows) {
    std::fill(chunk.begin(), chunk.end(), 0.0);
    const std::size_t stop = std::min(n, start + kGramChunkRows);
    for (std::size_t r = start; r < stop; ++r) {
      const double* x = rows.row(r).data();
      for (std::size_t i = 0; i < h; ++i) {
        const double xi = x[i];
        double* dst = chunk.data() + i * h;
        for (std::size_t j = i; j < h; ++j) dst[j] += xi * x[j];
      }
    }
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = i; j < h; ++j) total[i * h + j] += chunk[i * h + j];
  }
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < i; ++j) total[i * h + j] = total[j * h + i];

  return {Tensor({h, h}, std::move(total)), n, tap};
}

GramStats zero_gram(std::size_t width, Tap tap) { return {Tensor({width, width}), 0, tap}; }

GramStats accumulate_gram(const BlockGraph& graph, const Tensor& batch, std::size_t block) {
  if (batch.empty()) throw ArgumentError("accumulate_gram: empty calibration batch");
  ForwardResult fr = forward(graph, batch, Capture{block, TapPoint::hidden});
  return gram_from_rows(*fr.captured, Tap{block, TapPoint::hidden});
}

GramStats merge_gram(const GramStats& a, const GramStats& b) {
  if (!(a.tap == b.tap)) throw ArgumentError("merge_gram: statistics come from different taps");
  if (a.g.shape() != b.g.shape()) {
    throw DimensionError("merge_gram: shape mismatch " + shape_string(a.g.shape()) + " vs " +
                         shape_string(b.g.shape()));
  }
  return {a.g + b.g, a.n_samples + b.n_samples, a.tap};
}

Tensor column_norms(const Tensor& rows) {
  if (rows.rank() != 2) throw DimensionError("column_norms expects a matrix, got " + shape_string(rows.shape()));
  std::vector<double> sq(rows.cols(), 0.0);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const auto x = rows.row(r);
    for (std::size_t c = 0; c < x.size(); ++c) sq[c] += x[c] * x[c];
  }
  for (auto& v : sq) v = std::sqrt(v);
  return Tensor::vector(std::move(sq));
}

Tensor input_feature_norms(const BlockGraph& graph, const Tensor& batch, std::size_t block) {
  ForwardResult fr = forward(graph, batch, Capture{block, TapPoint::block_input});
  return column_norms(*fr.captured);
}

ClosedLoopCalibrator::ClosedLoopCalibrator(BlockGraph graph, Tensor batch, std::vector<std::size_t> plan)
    : graph_(std::move(graph)), x_(std::move(batch)), plan_(std::move(plan)) {
  if (x_.empty()) throw ArgumentError("closed loop: empty calibration batch");
  graph_.check_batch(x_);
  for (std::size_t i = 0; i < plan_.size(); ++i) {
    if (plan_[i] >= graph_.size()) {
      throw ArgumentError("closed loop: planned block " + std::to_string(plan_[i]) + " out of range");
    }
    if (i > 0 && plan_[i] <= plan_[i - 1]) {
      throw ArgumentError("closed loop: plan must list blocks in ascending order");
    }
  }
}

std::size_t ClosedLoopCalibrator::upcoming_block() const {
  if (done()) throw ArgumentError("closed loop: plan exhausted");
  return plan_[cursor_];
}

void ClosedLoopCalibrator::advance_to(std::size_t block) {
  if (pending_) {
    x_ = block_forward(graph_.block(position_), x_);
    ++position_;
    pending_ = false;
  }
  x_ = forward_range(graph_, std::move(x_), position_, block);
  position_ = block;
}

GramStats ClosedLoopCalibrator::next() {
  const std::size_t target = upcoming_block();
  advance_to(target);
  Tensor hidden = block_hidden(graph_.block(target), x_);
  pending_ = true;
  ++cursor_;
  return gram_from_rows(hidden, Tap{target, TapPoint::hidden});
}

void ClosedLoopCalibrator::commit(Block replacement) {
  if (!pending_) throw ArgumentError("closed loop: commit() without a preceding next()");
  graph_.set_block(position_, std::move(replacement));
  x_ = block_forward(graph_.block(position_), x_);
  ++position_;
  pending_ = false;
}

std::vector<GramStats> closed_loop_pass(const BlockGraph& graph, const Tensor& batch,
                                        const std::vector<std::size_t>& plan, const BlockRewriter& rewrite) {
  ClosedLoopCalibrator loop(graph, batch, plan);
  std::vector<GramStats> out;
  while (!loop.done()) {
    const std::size_t block = loop.upcoming_block();
    GramStats stats = loop.next();
    if (rewrite) {
      if (auto replacement = rewrite(block, stats, loop.block_input())) loop.commit(std::move(*replacement));
    }
    out.push_back(std::move(stats));
  }
  return out;
}

std::vector<std::uint8_t> encode_gram(const GramStats& stats) {
  detail::ByteWriter w;
  w.magic("GRLG");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(stats.width()));
  w.u64(stats.n_samples);
  for (double v : stats.g.data()) w.f64(v);
  return w.bytes();
}

GramStats decode_gram(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "gram file");
  r.expect_magic("GRLG");
  r.expect_version(1);
  const std::size_t h = r.u32("width");
  const std::uint64_t n = r.u64("sample count");
  if (h == 0) throw ManifestError("gram file: zero width");
  if (r.remaining() != 8 * h * h) {
    throw TruncatedError("gram file: width " + std::to_string(h) + " needs " + std::to_string(8 * h * h) +
                         " payload bytes, found " + std::to_string(r.remaining()));
  }
  std::vector<double> data(h * h);
  for (auto& v : data) v = r.f64();
  return {Tensor({h, h}, std::move(data)), n, Tap{}};
}

void save_gram(const GramStats& stats, const std::filesystem::path& path) {
  detail::write_file(path, encode_gram(stats));
}

GramStats load_gram(const std::filesystem::path& path) { return decode_gram(detail::read_file(path)); }

}  // namespace grail
