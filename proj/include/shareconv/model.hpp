#pragma once

#include <cstdint>

#include "shareconv/catalog.hpp"

namespace shareconv {

template <typename T>
struct NetworkTape {
  SequenceTape<T> stem;
  std::vector<BlockTape<T>> blocks;
  SequenceTape<T> head;
};

/// A planned network together with its materialized parameters.
template <typename T>
class Model {
 public:
  Model(NetworkPlan plan, std::uint64_t init_seed);

  static Model build(const NetworkSpec& spec, std::uint64_t init_seed) {
    return Model(plan_network(spec), init_seed);
  }

  const NetworkSpec& spec() const noexcept { return spec_; }
  const Network& network() const noexcept { return network_; }
  const std::vector<std::optional<ParameterId>>& stage_shared() const noexcept { return stage_shared_; }
  ParameterRegistry<T>& params() noexcept { return params_; }
  const ParameterRegistry<T>& params() const noexcept { return params_; }

  /// images: N x C x H x W, returns N x class_count logits.
  Tensor<T> forward(const Tensor<T>& images, Mode mode, Rng& rng, NetworkTape<T>& tape);

  /// Eval-mode forward without keeping a tape for the caller.
  Tensor<T> infer(const Tensor<T>& images);

  /// Accumulates every parameter gradient into the registry (shared slots
  /// receive one contribution per binding) and returns the input gradient.
  Tensor<T> backward(const NetworkTape<T>& tape, const Tensor<T>& grad_logits);

  BatchNormConfig batchnorm{};

 private:
  NetworkSpec spec_;
  Network network_;
  std::vector<std::optional<ParameterId>> stage_shared_;
  ParameterRegistry<T> params_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace shareconv
