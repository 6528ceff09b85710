#include "shareconv/blocks.hpp"

#include <fmt/format.h>

namespace shareconv {

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::basic_post: return "basic_post";
    case BlockKind::basic_pre_wide: return "basic_pre_wide";
    case BlockKind::bottleneck_post: return "bottleneck_post";
    case BlockKind::bottleneck_pre: return "bottleneck_pre";
  }
  return "unknown";
}

BlockKind parse_block_kind(std::string_view name) {
  for (auto k : {BlockKind::basic_post, BlockKind::basic_pre_wide, BlockKind::bottleneck_post,
                 BlockKind::bottleneck_pre}) {
    if (to_string(k) == name) return k;
  }
  throw Error(fmt::format("unknown block kind '{}'", name));
}

bool is_bottleneck(BlockKind kind) {
  return kind == BlockKind::bottleneck_post || kind == BlockKind::bottleneck_pre;
}

bool is_pre_activation(BlockKind kind) {
  return kind == BlockKind::basic_pre_wide || kind == BlockKind::bottleneck_pre;
}

bool has_projection(const BlockConfig& config) {
  return config.stride != 1 || config.in_channels != config.out_channels;
}

namespace {

LayerDescriptor conv(std::string role, std::size_t k, std::size_t stride, std::size_t in, std::size_t out,
                     bool designated = false) {
  LayerDescriptor d;
  d.kind = LayerKind::conv;
  d.role = std::move(role);
  d.kernel = k;
  d.stride = stride;
  d.in_channels = in;
  d.out_channels = out;
  d.designated = designated;
  return d;
}

LayerDescriptor bn(std::string role, std::size_t channels) {
  LayerDescriptor d;
  d.kind = LayerKind::batchnorm;
  d.role = std::move(role);
  d.in_channels = channels;
  d.out_channels = channels;
  return d;
}

LayerDescriptor relu_layer() { return LayerDescriptor{}; }

LayerDescriptor dropout_layer(double rate) {
  LayerDescriptor d;
  d.kind = LayerKind::dropout;
  d.dropout_rate = rate;
  return d;
}

void validate(const BlockConfig& c) {
  if (c.in_channels == 0 || c.out_channels == 0) throw Error("block channel counts must be positive");
  if (c.stride != 1 && c.stride != 2) throw Error(fmt::format("block stride must be 1 or 2, got {}", c.stride));
  if (is_bottleneck(c.kind) && c.mid_channels == 0) throw Error("bottleneck blocks need mid_channels");
  if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0)) throw Error("dropout rate must be in [0, 1)");
  if (c.dropout_rate > 0.0 && c.kind != BlockKind::basic_pre_wide) {
    throw Error("dropout is only supported in basic_pre_wide blocks");
  }
}

}  // namespace

BlockLayout layer_sequence(const BlockConfig& c) {
  validate(c);
  const std::size_t in = c.in_channels, out = c.out_channels, mid = c.mid_channels, s = c.stride;
  BlockLayout l;
  switch (c.kind) {
    case BlockKind::bottleneck_post:
      l.branch = {conv("conv1", 1, 1, in, mid), bn("bn1", mid),  relu_layer(),
                  conv("conv2", 3, s, mid, mid, true), bn("bn2", mid), relu_layer(),
                  conv("conv3", 1, 1, mid, out), bn("bn3", out)};
      l.relu_after_add = true;
      break;
    case BlockKind::basic_post:
      l.branch = {conv("conv1", 3, s, in, out), bn("bn1", out), relu_layer(),
                  conv("conv2", 3, 1, out, out, true), bn("bn2", out)};
      l.relu_after_add = true;
      break;
    case BlockKind::basic_pre_wide:
      l.branch = {bn("bn1", in), relu_layer(), conv("conv1", 3, s, in, out)};
      if (c.dropout_rate > 0.0) l.branch.push_back(dropout_layer(c.dropout_rate));
      l.branch.insert(l.branch.end(), {bn("bn2", out), relu_layer(), conv("conv2", 3, 1, out, out, true)});
      break;
    case BlockKind::bottleneck_pre:
      l.branch = {bn("bn1", in),   relu_layer(), conv("conv1", 1, 1, in, mid),
                  bn("bn2", mid),  relu_layer(), conv("conv2", 3, s, mid, mid, true),
                  bn("bn3", mid),  relu_layer(), conv("conv3", 1, 1, mid, out)};
      break;
  }
  if (has_projection(c)) {
    l.projection.push_back(conv("proj", 1, s, in, out));
    if (!is_pre_activation(c.kind)) l.projection.push_back(bn("proj_bn", out));
    l.shortcut_tap = is_pre_activation(c.kind) ? 2 : 0;
  }
  return l;
}

Shape designated_kernel_shape(const BlockConfig& c) {
  const std::size_t ch = is_bottleneck(c.kind) ? c.mid_channels : c.out_channels;
  return {ch, ch, 3, 3};
}

namespace {

Op plan_layer(const LayerDescriptor& d, const std::string& block, const std::optional<ParameterId>& shared,
              ParameterLayout& layout) {
  const std::string instance = block + "." + d.role;
  switch (d.kind) {
    case LayerKind::conv:
      if (d.designated && shared) {
        return bind_conv(layout, instance, *shared, d.in_channels, d.out_channels, d.kernel, d.stride);
      }
      return declare_conv(layout, instance, d.in_channels, d.out_channels, d.kernel, d.stride);
    case LayerKind::batchnorm:
      return declare_batchnorm(layout, instance, d.out_channels);
    case LayerKind::relu:
      return ReluOp{};
    case LayerKind::dropout:
      return DropoutOp{d.dropout_rate};
  }
  throw Error("unreachable layer kind");
}

}  // namespace

ResidualBlock plan_block(const BlockConfig& config, const std::string& name, ParameterLayout& layout) {
  const BlockLayout l = layer_sequence(config);
  if (config.shared_binding) {
    const auto& decl = layout.slot(*config.shared_binding);
    require_same_shape(designated_kernel_shape(config), decl.shape,
                       fmt::format("shared binding for {}", name).c_str());
  }
  ResidualBlock b{name, config, {}, {}, l.shortcut_tap, l.relu_after_add};
  for (const auto& d : l.branch) b.branch.push_back(plan_layer(d, name, config.shared_binding, layout));
  for (const auto& d : l.projection) b.projection.push_back(plan_layer(d, name, std::nullopt, layout));
  return b;
}

namespace {

void check_input(const ResidualBlock& block, const Shape& x) {
  if (x.size() != 4 || x[1] != block.config.in_channels) {
    throw ShapeError(fmt::format("{}: expected N x {} x H x W input, got {}", block.name,
                                 block.config.in_channels, format_shape(x)));
  }
}

}  // namespace

template <typename T>
Tensor<T> block_forward(const ResidualBlock& block, const Tensor<T>& x, ForwardContext<T>& ctx,
                        BlockTape<T>& tape) {
  check_input(block, x.extents());
  const std::size_t n = block.branch.size();
  tape.branch.caches.resize(n);
  Tensor<T> cur = x;
  Tensor<T> tapped;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == block.shortcut_tap && !block.projection.empty()) tapped = cur;
    cur = forward_op(block.branch[i], cur, ctx, tape.branch.caches[i]);
  }
  if (block.projection.empty()) {
    cur += x;
  } else {
    cur += forward_sequence<T>(block.projection, std::move(tapped), ctx, tape.projection);
  }
  if (block.relu_after_add) {
    tape.pre_relu = cur;
    return relu(cur);
  }
  return cur;
}

template <typename T>
Tensor<T> block_backward(const ResidualBlock& block, const BlockTape<T>& tape, const Tensor<T>& grad,
                         ParameterRegistry<T>& params) {
  const Tensor<T> g_sum = block.relu_after_add ? relu_backward(tape.pre_relu, grad) : grad;
  Tensor<T> g = g_sum;
  for (std::size_t i = block.branch.size() + 1; i-- > 0;) {
    // afterwards g is the gradient of the activation entering branch layer i
    if (i < block.branch.size()) g = backward_op(block.branch[i], tape.branch.caches[i], g, params);
    if (i == block.shortcut_tap && !block.projection.empty()) {
      g += backward_sequence<T>(block.projection, tape.projection, g_sum, params);
    }
  }
  if (block.projection.empty()) g += g_sum;
  return g;
}

template Tensor<float> block_forward(const ResidualBlock&, const Tensor<float>&, ForwardContext<float>&,
                                     BlockTape<float>&);
template Tensor<double> block_forward(const ResidualBlock&, const Tensor<double>&, ForwardContext<double>&,
                                      BlockTape<double>&);
template Tensor<float> block_backward(const ResidualBlock&, const BlockTape<float>&, const Tensor<float>&,
                                      ParameterRegistry<float>&);
template Tensor<double> block_backward(const ResidualBlock&, const BlockTape<double>&,
                                       const Tensor<double>&, ParameterRegistry<double>&);

}  // namespace shareconv
