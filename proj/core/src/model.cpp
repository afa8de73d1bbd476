#include "grail/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "grail/errors.hpp"
#include "grail/linalg.hpp"
#include "grail/parallel.hpp"

namespace grail {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::gelu:
      return "gelu";
    case Activation::identity:
      return "identity";
  }
  return "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "gelu") return Activation::gelu;
  if (name == "identity") return Activation::identity;
  throw ArgumentError("unknown activation '" + std::string(name) + "' (expected relu, gelu, identity)");
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::gelu:
      return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    case Activation::identity:
      return x;
  }
  return x;
}

namespace {

void expect_shape(const Tensor& t, const Shape& shape, const char* name) {
  if (t.shape() != shape) {
    throw DimensionError(std::string(name) + " has shape " + shape_string(t.shape()) + ", expected " +
                         shape_string(shape));
  }
}

void expect_rank(const Tensor& t, std::size_t rank, const char* name) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(name) + " must have rank " + std::to_string(rank) + ", got shape " +
                         shape_string(t.shape()));
  }
}

std::size_t conv_out(std::size_t in, std::size_t kernel, const ConvGeometry& g) {
  if (g.stride == 0) throw DimensionError("convolution stride must be >= 1");
  const std::size_t padded = in + 2 * g.padding;
  if (padded < kernel) {
    throw DimensionError("convolution kernel " + std::to_string(kernel) + " exceeds padded input " +
                         std::to_string(padded));
  }
  return (padded - kernel) / g.stride + 1;
}

// rows x C -> rows x O, y = x W^T + b.
Tensor linear(const Tensor& rows, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(rows, transpose(w));
  if (!b.empty()) {
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto out = y.row(r);
      for (std::size_t o = 0; o < out.size(); ++o) out[o] += b[o];
    }
  }
  return y;
}

void activate_inplace(Tensor& t, Activation a) {
  if (a == Activation::identity) return;
  for (auto& v : t.data()) v = activate(a, v);
}

// Flattens every axis but the last into rows.
Tensor leading_rows(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("expected a batch with leading axes, got shape " + shape_string(x.shape()));
  const std::size_t last = x.shape().back();
  return x.reshaped({x.size() / last, last});
}

Tensor restore_leading(const Tensor& rows, const Shape& like) {
  Shape shape = like;
  shape.back() = rows.cols();
  return rows.reshaped(shape);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeometry& g) {
  expect_rank(x, 4, "convolution input");
  const std::size_t n = x.dim(0), c = x.dim(1), hi = x.dim(2), wi = x.dim(3);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c) {
    throw DimensionError("convolution kernel " + shape_string(w.shape()) + " does not accept input " +
                         shape_string(x.shape()));
  }
  const std::size_t ho = conv_out(hi, kh, g);
  const std::size_t wo = conv_out(wi, kw, g);
  Tensor y({n, o, ho, wo});
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  const double* xs = x.data().data();
  const double* ws = w.data().data();
  double* ys = y.data().data();
  parallel_for(n, [&](std::size_t in) {
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double s = b.empty() ? 0.0 : b[oc];
          for (std::size_t ic = 0; ic < c; ++ic) {
            const double* xplane = xs + (in * c + ic) * hi * wi;
            const double* kern = ws + (oc * c + ic) * kh * kw;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(hi)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wi)) continue;
                s += kern[ky * kw + kx] * xplane[static_cast<std::size_t>(iy) * wi + static_cast<std::size_t>(ix)];
              }
            }
          }
          ys[((in * o + oc) * ho + oy) * wo + ox] = s;
        }
  });
  return y;
}

// N x C x H x W -> (N*H*W) x C, rows ordered by (n, y, x).
Tensor spatial_rows(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor rows({n * h * w, c});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t iy = 0; iy < h; ++iy)
        for (std::size_t ix = 0; ix < w; ++ix) rows((in * h + iy) * w + ix, ic) = x(in, ic, iy, ix);
  return rows;
}

// (B*T) x (n_h*d_h) concatenated head outputs for a B x T x D input.
Tensor attention_heads(const AttentionBlock& blk, const Tensor& x) {
  const std::size_t batch = x.dim(0);
  const std::size_t seq = x.rank() == 3 ? x.dim(1) : 1;
  const std::size_t d_model = x.shape().back();
  const Tensor rows = x.reshaped({batch * seq, d_model});
  const Tensor q = linear(rows, blk.w_q, {});
  const Tensor k = linear(rows, blk.w_k, {});
  const Tensor v = linear(rows, blk.w_v, {});

  const std::size_t dh = blk.head_dim;
  const std::size_t n_kv = blk.kv_heads();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out({batch * seq, blk.n_heads * dh});
  std::vector<double> p(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * seq;
    for (std::size_t h = 0; h < blk.n_heads; ++h) {
      const std::size_t kv = h % n_kv;
      for (std::size_t t = 0; t < seq; ++t) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < seq; ++s) {
          if (blk.causal && s > t) {
            p[s] = -std::numeric_limits<double>::infinity();
            continue;
          }
          double dot = 0.0;
          for (std::size_t e = 0; e < dh; ++e) dot += q(base + t, h * dh + e) * k(base + s, kv * dh + e);
          p[s] = dot * scale;
          m = std::max(m, p[s]);
        }
        double z = 0.0;
        for (std::size_t s = 0; s < seq; ++s) {
          p[s] = std::exp(p[s] - m);
          z += p[s];
        }
        for (std::size_t e = 0; e < dh; ++e) {
          double acc = 0.0;
          for (std::size_t s = 0; s < seq; ++s) acc += p[s] * v(base + s, kv * dh + e);
          out(base + t, h * dh + e) = acc / z;
        }
      }
    }
  }
  return out;
}

void check_attention_input(const AttentionBlock& blk, const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("attention input must be (B x D) or (B x T x D), got " + shape_string(x.shape()));
  }
  if (x.shape().back() != blk.input_dim()) {
    throw DimensionError("attention input " + shape_string(x.shape()) + " does not match model width " +
                         std::to_string(blk.input_dim()));
  }
}

void check_feature_input(const Tensor& x, std::size_t dim, const char* what) {
  if (x.rank() < 2 || x.shape().back() != dim) {
    throw DimensionError(std::string(what) + " input " + shape_string(x.shape()) + " does not end in width " +
                         std::to_string(dim));
  }
}

struct HiddenVisitor {
  const Tensor& x;

  Tensor operator()(const DenseBlock& b) const {
    check_feature_input(x, b.input_dim(), "dense");
    Tensor h = linear(leading_rows(x), b.w_producer, b.b_producer);
    activate_inplace(h, b.activation);
    return h;
  }
  Tensor operator()(const FfnBlock& b) const {
    check_feature_input(x, b.input_dim(), "ffn");
    Tensor h = linear(leading_rows(x), b.w_fc, b.b_fc);
    activate_inplace(h, b.activation);
    return h;
  }
  Tensor operator()(const ConvBlock& b) const {
    Tensor h = conv2d(x, b.w_producer, b.b_producer, b.producer_geometry);
    activate_inplace(h, b.activation);
    return h;  // still N x H x h x w
  }
  Tensor operator()(const AttentionBlock& b) const {
    check_attention_input(b, x);
    return attention_heads(b, x);
  }
};

}  // namespace

void DenseBlock::validate() const {
  expect_rank(w_producer, 2, "dense w_producer");
  expect_rank(w_consumer, 2, "dense w_consumer");
  expect_shape(b_producer, {w_producer.dim(0)}, "dense b_producer");
  if (w_consumer.dim(1) != w_producer.dim(0)) {
    throw DimensionError("dense consumer " + shape_string(w_consumer.shape()) + " does not consume producer " +
                         shape_string(w_producer.shape()));
  }
  expect_shape(b_consumer, {w_consumer.dim(0)}, "dense b_consumer");
}

void ConvBlock::validate() const {
  expect_rank(w_producer, 4, "conv w_producer");
  expect_rank(w_consumer, 4, "conv w_consumer");
  expect_shape(b_producer, {w_producer.dim(0)}, "conv b_producer");
  if (w_consumer.dim(1) != w_producer.dim(0)) {
    throw DimensionError("conv consumer " + shape_string(w_consumer.shape()) + " does not consume producer " +
                         shape_string(w_producer.shape()));
  }
  expect_shape(b_consumer, {w_consumer.dim(0)}, "conv b_consumer");
  if (producer_geometry.stride == 0 || consumer_geometry.stride == 0) {
    throw DimensionError("conv stride must be >= 1");
  }
}

void FfnBlock::validate() const {
  expect_rank(w_fc, 2, "ffn w_fc");
  expect_rank(w_proj, 2, "ffn w_proj");
  expect_shape(b_fc, {w_fc.dim(0)}, "ffn b_fc");
  if (w_proj.dim(1) != w_fc.dim(0)) {
    throw DimensionError("ffn w_proj " + shape_string(w_proj.shape()) + " does not consume w_fc " +
                         shape_string(w_fc.shape()));
  }
  expect_shape(b_proj, {w_proj.dim(0)}, "ffn b_proj");
}

void AttentionBlock::validate() const {
  if (n_heads == 0 || head_dim == 0 || gqa_groups == 0) {
    throw DimensionError("attention needs positive n_heads, head_dim and gqa_groups");
  }
  if (n_heads % gqa_groups != 0) {
    throw DimensionError("attention n_heads " + std::to_string(n_heads) + " is not divisible by gqa_groups " +
                         std::to_string(gqa_groups));
  }
  expect_rank(w_q, 2, "attention w_q");
  const std::size_t d = w_q.dim(1);
  expect_shape(w_q, {n_heads * head_dim, d}, "attention w_q");
  expect_shape(w_k, {kv_heads() * head_dim, d}, "attention w_k");
  expect_shape(w_v, {kv_heads() * head_dim, d}, "attention w_v");
  expect_rank(w_o, 2, "attention w_o");
  if (w_o.dim(1) != n_heads * head_dim) {
    throw DimensionError("attention w_o " + shape_string(w_o.shape()) + " must have n_heads*head_dim = " +
                         std::to_string(n_heads * head_dim) + " columns");
  }
}

std::string_view block_type_name(const Block& block) {
  static constexpr std::string_view names[] = {"dense", "conv", "ffn", "attention"};
  return names[block.index()];
}

std::size_t block_input_dim(const Block& block) {
  return std::visit([](const auto& b) { return b.input_dim(); }, block);
}

std::size_t block_hidden_dim(const Block& block) {
  return std::visit([](const auto& b) { return b.hidden_dim(); }, block);
}

std::size_t block_output_dim(const Block& block) {
  return std::visit([](const auto& b) { return b.output_dim(); }, block);
}

void validate_block(const Block& block) {
  std::visit([](const auto& b) { b.validate(); }, block);
}

Tensor block_hidden(const Block& block, const Tensor& input) {
  Tensor h = std::visit(HiddenVisitor{input}, block);
  if (std::holds_alternative<ConvBlock>(block)) return spatial_rows(h);
  return h;
}

Tensor feature_rows(const Block& block, const Tensor& input) {
  if (std::holds_alternative<ConvBlock>(block)) {
    expect_rank(input, 4, "convolution input");
    return spatial_rows(input);
  }
  return leading_rows(input);
}

Tensor block_forward(const Block& block, const Tensor& input, Tensor* hidden_rows) {
  Tensor h = std::visit(HiddenVisitor{input}, block);
  if (const auto* conv = std::get_if<ConvBlock>(&block)) {
    if (hidden_rows != nullptr) *hidden_rows = spatial_rows(h);
    return conv2d(h, conv->w_consumer, conv->b_consumer, conv->consumer_geometry);
  }
  if (hidden_rows != nullptr) *hidden_rows = h;
  Tensor y = std::visit(
      [&](const auto& b) -> Tensor {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, DenseBlock>) return linear(h, b.w_consumer, b.b_consumer);
        if constexpr (std::is_same_v<T, FfnBlock>) return linear(h, b.w_proj, b.b_proj);
        if constexpr (std::is_same_v<T, AttentionBlock>) return linear(h, b.w_o, {});
        return {};
      },
      block);
  return restore_leading(y, input.shape());
}

BlockGraph::BlockGraph(Shape input_shape, std::vector<Block> blocks)
    : input_shape_(std::move(input_shape)), blocks_(std::move(blocks)) {
  validate();
}

const Block& BlockGraph::block(std::size_t i) const {
  if (i >= blocks_.size()) {
    throw ArgumentError("block index " + std::to_string(i) + " out of range (graph has " +
                        std::to_string(blocks_.size()) + " blocks)");
  }
  return blocks_[i];
}

void BlockGraph::set_block(std::size_t i, Block block) {
  (void)this->block(i);
  std::swap(blocks_[i], block);
  try {
    validate();
  } catch (...) {
    std::swap(blocks_[i], block);
    throw;
  }
}

void BlockGraph::validate() const {
  if (input_shape_.size() != 1 && input_shape_.size() != 3) {
    throw DimensionError("model input shape must be {C} or {C, H, W}, got " + shape_string(input_shape_));
  }
  for (auto d : input_shape_) {
    if (d == 0) throw DimensionError("model input shape has a zero dimension");
  }
  bool spatial = input_shape_.size() == 3;
  std::size_t channels = input_shape_[0];
  std::size_t height = spatial ? input_shape_[1] : 0;
  std::size_t width = spatial ? input_shape_[2] : 0;

  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& blk = blocks_[i];
    const std::string where = "block " + std::to_string(i) + " (" + std::string(block_type_name(blk)) + "): ";
    try {
      validate_block(blk);
    } catch (const DimensionError& e) {
      throw DimensionError(where + e.what());
    }
    const bool is_conv = std::holds_alternative<ConvBlock>(blk);
    if (is_conv != spatial) {
      throw DimensionError(where + (is_conv ? "convolution needs a spatial input"
                                            : "vector block cannot follow a spatial feature map"));
    }
    if (block_input_dim(blk) != channels) {
      throw DimensionError(where + "expects input width " + std::to_string(block_input_dim(blk)) +
                           " but receives " + std::to_string(channels));
    }
    if (const auto* conv = std::get_if<ConvBlock>(&blk)) {
      try {
        height = conv_out(height, conv->w_producer.dim(2), conv->producer_geometry);
        width = conv_out(width, conv->w_producer.dim(3), conv->producer_geometry);
        height = conv_out(height, conv->w_consumer.dim(2), conv->consumer_geometry);
        width = conv_out(width, conv->w_consumer.dim(3), conv->consumer_geometry);
      } catch (const DimensionError& e) {
        throw DimensionError(where + e.what());
      }
    }
    channels = block_output_dim(blk);
  }
}

void BlockGraph::check_batch(const Tensor& batch) const {
  if (input_shape_.size() == 3) {
    if (batch.rank() != 4 || batch.dim(1) != input_shape_[0] || batch.dim(2) != input_shape_[1] ||
        batch.dim(3) != input_shape_[2]) {
      throw DimensionError("batch " + shape_string(batch.shape()) + " does not match model input N x " +
                           shape_string(input_shape_));
    }
    return;
  }
  if (batch.rank() < 2 || batch.rank() > 3 || batch.shape().back() != input_shape_[0]) {
    throw DimensionError("batch " + shape_string(batch.shape()) + " does not match model input (N [x T]) x " +
                         std::to_string(input_shape_[0]));
  }
}

Tensor forward_range(const BlockGraph& graph, Tensor x, std::size_t first, std::size_t last) {
  for (std::size_t i = first; i < last; ++i) x = block_forward(graph.block(i), x);
  return x;
}

Tensor forward(const BlockGraph& graph, const Tensor& batch) {
  graph.check_batch(batch);
  return forward_range(graph, batch, 0, graph.size());
}

ForwardResult forward(const BlockGraph& graph, const Tensor& batch, const Capture& capture) {
  graph.check_batch(batch);
  if (capture.block >= graph.size()) {
    throw ArgumentError("capture block " + std::to_string(capture.block) + " out of range (graph has " +
                        std::to_string(graph.size()) + " blocks)");
  }
  ForwardResult result;
  Tensor x = forward_range(graph, batch, 0, capture.block);
  const Block& blk = graph.block(capture.block);
  if (capture.tap == TapPoint::block_input) {
    result.captured = feature_rows(blk, x);
    x = block_forward(blk, x);
  } else {
    Tensor hidden;
    x = block_forward(blk, x, &hidden);
    result.captured = std::move(hidden);
  }
  result.output = forward_range(graph, std::move(x), capture.block + 1, graph.size());
  return result;
}

}  // namespace grail
