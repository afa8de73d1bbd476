#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "grail/tensor.hpp"

namespace grail {

enum class Activation { relu, gelu, identity };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

/// Exact erf-based GELU; relu; identity.
double activate(Activation a, double x);

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

/// producer (H x C) -> activation -> consumer (O x H).
struct DenseBlock {
  Tensor w_producer;
  Tensor b_producer;
  Activation activation = Activation::relu;
  Tensor w_consumer;
  Tensor b_consumer;

  void validate() const;
  [[nodiscard]] std::size_t input_dim() const { return w_producer.dim(1); }
  [[nodiscard]] std::size_t hidden_dim() const { return w_producer.dim(0); }
  [[nodiscard]] std::size_t output_dim() const { return w_consumer.dim(0); }
  friend bool operator==(const DenseBlock&, const DenseBlock&) = default;
};

/// Two NCHW convolutions around an activation. Kernels are O x I x kH x kW.
struct ConvBlock {
  Tensor w_producer;
  Tensor b_producer;
  Activation activation = Activation::relu;
  Tensor w_consumer;
  Tensor b_consumer;
  ConvGeometry producer_geometry;
  ConvGeometry consumer_geometry;

  void validate() const;
  [[nodiscard]] std::size_t input_dim() const { return w_producer.dim(1); }
  [[nodiscard]] std::size_t hidden_dim() const { return w_producer.dim(0); }
  [[nodiscard]] std::size_t output_dim() const { return w_consumer.dim(0); }
  friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

/// Transformer MLP: w_fc (H x D) expands, w_proj (D x H) projects back.
struct FfnBlock {
  Tensor w_fc;
  Tensor b_fc;
  Activation activation = Activation::gelu;
  Tensor w_proj;
  Tensor b_proj;

  void validate() const;
  [[nodiscard]] std::size_t input_dim() const { return w_fc.dim(1); }
  [[nodiscard]] std::size_t hidden_dim() const { return w_fc.dim(0); }
  [[nodiscard]] std::size_t output_dim() const { return w_proj.dim(0); }
  friend bool operator==(const FfnBlock&, const FfnBlock&) = default;
};

/// Multi-head self-attention without biases.
///
/// Query heads are laid out as `gqa_groups` groups of kv_heads() heads each;
/// query head q attends with KV head (q mod kv_heads()). With gqa_groups == 1
/// this is standard multi-head attention.
struct AttentionBlock {
  Tensor w_q;  // (n_heads * head_dim) x D
  Tensor w_k;  // (kv_heads * head_dim) x D
  Tensor w_v;  // (kv_heads * head_dim) x D
  Tensor w_o;  // D_out x (n_heads * head_dim)
  std::size_t n_heads = 1;
  std::size_t head_dim = 1;
  std::size_t gqa_groups = 1;
  bool causal = false;

  void validate() const;
  [[nodiscard]] std::size_t kv_heads() const { return n_heads / gqa_groups; }
  [[nodiscard]] std::size_t input_dim() const { return w_q.dim(1); }
  [[nodiscard]] std::size_t hidden_dim() const { return n_heads * head_dim; }
  [[nodiscard]] std::size_t output_dim() const { return w_o.dim(0); }
  friend bool operator==(const AttentionBlock&, const AttentionBlock&) = default;
};

using Block = std::variant<DenseBlock, ConvBlock, FfnBlock, AttentionBlock>;

std::string_view block_type_name(const Block& block);
std::size_t block_input_dim(const Block& block);
std::size_t block_hidden_dim(const Block& block);
std::size_t block_output_dim(const Block& block);
void validate_block(const Block& block);

/// Forward through one block. When `hidden_rows` is set it receives the
/// consumer-input activations flattened to (samples x H).
Tensor block_forward(const Block& block, const Tensor& input, Tensor* hidden_rows = nullptr);

/// Producer half only: the consumer-input activations as (samples x H).
Tensor block_hidden(const Block& block, const Tensor& input);

/// Feature rows of a block input: conv maps give one row per spatial
/// position, other tensors one row per leading index.
Tensor feature_rows(const Block& block, const Tensor& input);

/// Ordered feed-forward chain of blocks.
class BlockGraph {
 public:
  BlockGraph() = default;
  /// `input_shape` is the per-sample shape: {C} for vector/token models,
  /// {C, H, W} for convolutional ones. Throws DimensionError when
  /// consecutive blocks do not fit together.
  BlockGraph(Shape input_shape, std::vector<Block> blocks);

  [[nodiscard]] const Shape& input_shape() const { return input_shape_; }
  [[nodiscard]] const std::vector<Block>& blocks() const { return blocks_; }
  [[nodiscard]] std::size_t size() const { return blocks_.size(); }
  [[nodiscard]] const Block& block(std::size_t i) const;

  /// Replaces block i; the graph is re-validated.
  void set_block(std::size_t i, Block block);

  /// Throws DimensionError unless `batch` matches the input shape with
  /// leading batch (and, for token models, sequence) axes.
  void check_batch(const Tensor& batch) const;

  friend bool operator==(const BlockGraph&, const BlockGraph&) = default;

 private:
  void validate() const;

  Shape input_shape_;
  std::vector<Block> blocks_;
};

enum class TapPoint {
  hidden,       // consumer input: post-activation hidden, or the concatenated heads before w_o
  block_input,  // producer input
};

struct Capture {
  std::size_t block = 0;
  TapPoint tap = TapPoint::hidden;
};

struct ForwardResult {
  Tensor output;
  std::optional<Tensor> captured;  // (samples x features)
};

Tensor forward(const BlockGraph& graph, const Tensor& batch);
ForwardResult forward(const BlockGraph& graph, const Tensor& batch, const Capture& capture);

/// Runs blocks [first, last) on `x`, which must already be the input of block `first`.
Tensor forward_range(const BlockGraph& graph, Tensor x, std::size_t first, std::size_t last);

}  // namespace grail
