#include "shareconv/model.hpp"

#include <fmt/format.h>

namespace shareconv {
namespace {


template <typename T>
ParameterRegistry<T> materialize(const ParameterLayout& layout, std::uint64_t seed) {
  Rng rng(seed);
  return ParameterRegistry<T>(layout, rng);
}

}  // namespace

template <typename T>
Model<T>::Model(NetworkPlan plan, std::uint64_t init_seed)
    : spec_(std::move(plan.spec)),
      network_(std::move(plan.network)),
      stage_shared_(std::move(plan.stage_shared)),
      params_(materialize<T>(plan.layout, init_seed)) {}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& images, Mode mode, Rng& rng, NetworkTape<T>& tape) {
  if (images.rank() != 4 || images.extent(1) != spec_.input_channels) {
    throw ShapeError(fmt::format("{}: expected N x {} x H x W images, got {}", spec_.name, spec_.input_channels,
                                 format_shape(images.extents())));
  }
  ForwardContext<T> ctx{params_, mode, rng, batchnorm};
  Tensor<T> x = forward_sequence<T>(network_.stem, images, ctx, tape.stem);
  tape.blocks.resize(network_.blocks.size());
  for (std::size_t i = 0; i < network_.blocks.size(); ++i) {
    x = block_forward(network_.blocks[i], x, ctx, tape.blocks[i]);
  }
  return forward_sequence<T>(network_.head, std::move(x), ctx, tape.head);
}

template <typename T>
Tensor<T> Model<T>::infer(const Tensor<T>& images) {
  Rng rng(0);
  NetworkTape<T> tape;
  return forward(images, Mode::eval, rng, tape);
}

template <typename T>
Tensor<T> Model<T>::backward(const NetworkTape<T>& tape, const Tensor<T>& grad_logits) {
  if (tape.blocks.size() != network_.blocks.size()) throw Error("tape does not belong to this network");
  Tensor<T> g = backward_sequence<T>(network_.head, tape.head, grad_logits, params_);
  for (std::size_t i = network_.blocks.size(); i-- > 0;) {
    g = block_backward(network_.blocks[i], tape.blocks[i], g, params_);
  }
  return backward_sequence<T>(network_.stem, tape.stem, std::move(g), params_);
}

template class Model<float>;
template class Model<double>;

}  // namespace shareconv
