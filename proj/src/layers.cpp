#include "shareconv/layers.hpp"

#include <fmt/format.h>

namespace shareconv {
namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

}  // namespace

template <typename T>
Tensor<T> forward_op(const Op& op, const Tensor<T>& x, ForwardContext<T>& ctx, OpCache<T>& cache) {
  auto& params = ctx.params;
  return std::visit(
      Overloaded{
          [&](const ConvOp& c) {
            cache = InputCache<T>{x};
            return conv2d_forward(x, params.value(c.kernel), c.geometry);
          },
          [&](const BatchNormOp& b) {
            RunningStats<T> running{params.buffer(b.running_mean), params.buffer(b.running_var)};
            auto r = batchnorm_forward(x, params.value(b.scale), params.value(b.shift), running, ctx.mode,
                                       ctx.batchnorm);
            if (ctx.mode == Mode::train) {
              params.buffer(b.running_mean) = std::move(r.running.mean);
              params.buffer(b.running_var) = std::move(r.running.var);
            }
            cache = std::move(r.cache);
            return std::move(r.output);
          },
          [&](const ReluOp&) {
            cache = InputCache<T>{x};
            return relu(x);
          },
          [&](const DropoutOp& d) {
            auto r = dropout(x, d.rate, ctx.rng, ctx.mode);
            cache = std::move(r.mask);
            return std::move(r.output);
          },
          [&](const MaxPoolOp& m) {
            auto r = max_pool(x, m.window);
            cache = std::move(r.cache);
            return std::move(r.output);
          },
          [&](const GlobalAvgPoolOp&) {
            cache = x.extents();
            return avg_pool_global(x);
          },
          [&](const LinearOp& l) {
            cache = InputCache<T>{x};
            return linear_forward(x, params.value(l.weight), params.value(l.bias));
          },
      },
      op);
}

template <typename T>
Tensor<T> backward_op(const Op& op, const OpCache<T>& cache, const Tensor<T>& grad,
                      ParameterRegistry<T>& params) {
  return std::visit(
      Overloaded{
          [&](const ConvOp& c) {
            const auto& input = std::get<InputCache<T>>(cache).input;
            auto g = conv2d_backward(input, params.value(c.kernel), c.geometry, grad);
            params.accumulate_grad(c.kernel, g.grad_kernel);
            return std::move(g.grad_input);
          },
          [&](const BatchNormOp& b) {
            auto g = batchnorm_backward(std::get<BatchNormCache<T>>(cache), grad);
            params.accumulate_grad(b.scale, g.grad_scale);
            params.accumulate_grad(b.shift, g.grad_shift);
            return std::move(g.grad_input);
          },
          [&](const ReluOp&) { return relu_backward(std::get<InputCache<T>>(cache).input, grad); },
          [&](const DropoutOp&) { return dropout_backward<T>(std::get<std::vector<T>>(cache), grad); },
          [&](const MaxPoolOp&) { return max_pool_backward(std::get<MaxPoolCache>(cache), grad); },
          [&](const GlobalAvgPoolOp&) { return avg_pool_global_backward(std::get<Shape>(cache), grad); },
          [&](const LinearOp& l) {
            const auto& input = std::get<InputCache<T>>(cache).input;
            auto g = linear_backward(input, params.value(l.weight), grad);
            params.accumulate_grad(l.weight, g.grad_weight);
            params.accumulate_grad(l.bias, g.grad_bias);
            return std::move(g.grad_input);
          },
      },
      op);
}

template <typename T>
Tensor<T> forward_sequence(std::span<const Op> ops, Tensor<T> x, ForwardContext<T>& ctx,
                           SequenceTape<T>& tape) {
  tape.caches.resize(ops.size());
  for (std::size_t i = 0; i < ops.size(); ++i) x = forward_op(ops[i], x, ctx, tape.caches[i]);
  return x;
}

template <typename T>
Tensor<T> backward_sequence(std::span<const Op> ops, const SequenceTape<T>& tape, Tensor<T> grad,
                            ParameterRegistry<T>& params) {
  if (tape.caches.size() != ops.size()) throw Error("tape does not match op sequence");
  for (std::size_t i = ops.size(); i-- > 0;) grad = backward_op(ops[i], tape.caches[i], grad, params);
  return grad;
}

ConvOp bind_conv(ParameterLayout& layout, const std::string& instance, ParameterId kernel_id, std::size_t in,
                 std::size_t out, std::size_t kernel, std::size_t stride) {
  layout.bind(instance, "kernel", kernel_id, {out, in, kernel, kernel});
  return ConvOp{instance, kernel_id, in, out, ConvGeometry::square(kernel, stride, kernel / 2)};
}

ConvOp declare_conv(ParameterLayout& layout, const std::string& instance, std::size_t in, std::size_t out,
                    std::size_t kernel, std::size_t stride) {
  const ParameterId id = layout.declare(instance, {out, in, kernel, kernel}, InitSpec::he_normal(), true);
  return bind_conv(layout, instance, id, in, out, kernel, stride);
}

BatchNormOp declare_batchnorm(ParameterLayout& layout, const std::string& instance, std::size_t channels) {
  const Shape shape{channels};
  const ParameterId scale = layout.declare(instance + ".scale", shape, InitSpec::constant(1.0), false);
  const ParameterId shift = layout.declare(instance + ".shift", shape, InitSpec::constant(0.0), false);
  layout.bind(instance, "scale", scale, shape);
  layout.bind(instance, "shift", shift, shape);
  const BufferId mean = layout.declare_buffer(instance + ".running_mean", shape, 0.0);
  const BufferId var = layout.declare_buffer(instance + ".running_var", shape, 1.0);
  return BatchNormOp{instance, scale, shift, mean, var, channels};
}

std::string describe(const Op& op) {
  return std::visit(
      Overloaded{
          [](const ConvOp& c) {
            return fmt::format("conv{}x{}/s{} {}->{} ({})", c.geometry.kernel_h, c.geometry.kernel_w,
                               c.geometry.stride, c.in_channels, c.out_channels, c.instance);
          },
          [](const BatchNormOp& b) { return fmt::format("bn {} ({})", b.channels, b.instance); },
          [](const ReluOp&) { return std::string("relu"); },
          [](const DropoutOp& d) { return fmt::format("dropout {}", d.rate); },
          [](const MaxPoolOp& m) {
            return fmt::format("maxpool{}x{}/s{}", m.window.kernel_h, m.window.kernel_w, m.window.stride);
          },
          [](const GlobalAvgPoolOp&) { return std::string("global-avgpool"); },
          [](const LinearOp& l) {
            return fmt::format("fc {}->{} ({})", l.in_features, l.out_features, l.instance);
          },
      },
      op);
}

#define SHARECONV_INSTANTIATE_LAYERS(T)                                                           \
  template Tensor<T> forward_op(const Op&, const Tensor<T>&, ForwardContext<T>&, OpCache<T>&);   \
  template Tensor<T> backward_op(const Op&, const OpCache<T>&, const Tensor<T>&,                 \
                                 ParameterRegistry<T>&);                                         \
  template Tensor<T> forward_sequence(std::span<const Op>, Tensor<T>, ForwardContext<T>&,        \
                                      SequenceTape<T>&);                                         \
  template Tensor<T> backward_sequence(std::span<const Op>, const SequenceTape<T>&, Tensor<T>,   \
                                       ParameterRegistry<T>&);

SHARECONV_INSTANTIATE_LAYERS(float)
SHARECONV_INSTANTIATE_LAYERS(double)

}  // namespace shareconv
