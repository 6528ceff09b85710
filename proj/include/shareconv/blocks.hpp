#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "shareconv/layers.hpp"

namespace shareconv {

/// The four residual block variants. Post-activation kinds (ImageNet) put
/// batchnorm and ReLU after each convolution; pre-activation kinds (CIFAR)
/// put them before.
enum class BlockKind { basic_post, basic_pre_wide, bottleneck_post, bottleneck_pre };

std::string_view to_string(BlockKind kind);
BlockKind parse_block_kind(std::string_view name);
bool is_bottleneck(BlockKind kind);
bool is_pre_activation(BlockKind kind);

struct BlockConfig {
  BlockKind kind = BlockKind::basic_post;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t mid_channels = 0;  // bottleneck kinds only
  std::size_t stride = 1;
  double dropout_rate = 0.0;     // basic_pre_wide only
  /// When set, the designated convolution binds to this slot instead of a
  /// private one.
  std::optional<ParameterId> shared_binding;
};

/// Identity shortcut iff stride is 1 and channel counts match.
bool has_projection(const BlockConfig& config);

enum class LayerKind { conv, batchnorm, relu, dropout };

struct LayerDescriptor {
  LayerKind kind = LayerKind::relu;
  std::string role;               // conv1, bn2, proj, ... (empty for relu/dropout)
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;   // for batchnorm: channel count
  bool designated = false;        // the convolution eligible for stage-level sharing
  double dropout_rate = 0.0;

  friend bool operator==(const LayerDescriptor&, const LayerDescriptor&) = default;
};

struct BlockLayout {
  std::vector<LayerDescriptor> branch;
  std::vector<LayerDescriptor> projection;  // empty for an identity shortcut
  /// Number of branch layers applied before the shortcut taps the signal.
  /// Zero means the shortcut reads the block input; pre-activation kinds
  /// with a projection tap after the leading bn/relu.
  std::size_t shortcut_tap = 0;
  bool relu_after_add = false;
};

/// Layer order of each block kind:
///   bottleneck_post: conv1x1 bn relu conv3x3(stride) bn relu conv1x1 bn, add, relu
///   basic_post:      conv3x3(stride) bn relu conv3x3 bn, add, relu
///   basic_pre_wide:  bn relu conv3x3(stride) [dropout] bn relu conv3x3, add
///   bottleneck_pre:  bn relu conv1x1 bn relu conv3x3(stride) bn relu conv1x1, add
/// Post-activation projections are conv1x1(stride)+bn, pre-activation ones a
/// bare conv1x1(stride).
BlockLayout layer_sequence(const BlockConfig& config);

/// Shape of the designated shared convolution's kernel.
Shape designated_kernel_shape(const BlockConfig& config);

struct ResidualBlock {
  std::string name;  // e.g. stage2.block3
  BlockConfig config;
  std::vector<Op> branch;
  std::vector<Op> projection;
  std::size_t shortcut_tap = 0;
  bool relu_after_add = false;
};

/// Declares the block's private slots and buffers in `layout` and binds every
/// layer instance. The designated convolution binds `config.shared_binding`
/// when set. Parameter names follow `<name>.<role>`.
ResidualBlock plan_block(const BlockConfig& config, const std::string& name, ParameterLayout& layout);

template <typename T>
struct BlockTape {
  SequenceTape<T> branch;
  SequenceTape<T> projection;
  Tensor<T> pre_relu;  // only with relu_after_add
};

/// shortcut(x) + residual(x), followed by ReLU for post-activation kinds.
template <typename T>
Tensor<T> block_forward(const ResidualBlock& block, const Tensor<T>& x, ForwardContext<T>& ctx,
                        BlockTape<T>& tape);

template <typename T>
Tensor<T> block_backward(const ResidualBlock& block, const BlockTape<T>& tape, const Tensor<T>& grad,
                         ParameterRegistry<T>& params);

}  // namespace shareconv
