#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "shareconv/ops.hpp"
#include "shareconv/params.hpp"

// Layer instances. An op is a stateless descriptor that names the slots it
// reads; activations needed for the backward pass are returned as a cache.
namespace shareconv {

struct ConvOp {
  std::string instance;
  ParameterId kernel;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  ConvGeometry geometry;
};

struct BatchNormOp {
  std::string instance;
  ParameterId scale;
  ParameterId shift;
  BufferId running_mean;
  BufferId running_var;
  std::size_t channels = 0;
};

struct ReluOp {};

struct DropoutOp {
  double rate = 0.0;
};

struct MaxPoolOp {
  ConvGeometry window;
};

struct GlobalAvgPoolOp {};

struct LinearOp {
  std::string instance;
  ParameterId weight;
  ParameterId bias;
  std::size_t in_features = 0;
  std::size_t out_features = 0;
};

using Op = std::variant<ConvOp, BatchNormOp, ReluOp, DropoutOp, MaxPoolOp, GlobalAvgPoolOp, LinearOp>;

template <typename T>
struct ForwardContext {
  ParameterRegistry<T>& params;
  Mode mode = Mode::train;
  Rng& rng;
  BatchNormConfig batchnorm{};
};

template <typename T>
struct InputCache {
  Tensor<T> input;
};

template <typename T>
using OpCache = std::variant<InputCache<T>, BatchNormCache<T>, std::vector<T>, MaxPoolCache, Shape>;

template <typename T>
struct SequenceTape {
  std::vector<OpCache<T>> caches;
};

template <typename T>
Tensor<T> forward_op(const Op& op, const Tensor<T>& x, ForwardContext<T>& ctx, OpCache<T>& cache);

/// Returns the gradient with respect to the op's input; parameter gradients
/// go to the registry through accumulate_grad.
template <typename T>
Tensor<T> backward_op(const Op& op, const OpCache<T>& cache, const Tensor<T>& grad,
                      ParameterRegistry<T>& params);

template <typename T>
Tensor<T> forward_sequence(std::span<const Op> ops, Tensor<T> x, ForwardContext<T>& ctx,
                           SequenceTape<T>& tape);

template <typename T>
Tensor<T> backward_sequence(std::span<const Op> ops, const SequenceTape<T>& tape, Tensor<T> grad,
                            ParameterRegistry<T>& params);

/// Declares a private He-initialized kernel named after the instance and
/// binds it. Padding is kernel/2.
ConvOp declare_conv(ParameterLayout& layout, const std::string& instance, std::size_t in, std::size_t out,
                    std::size_t kernel, std::size_t stride);
/// Binds an existing (possibly shared) kernel slot.
ConvOp bind_conv(ParameterLayout& layout, const std::string& instance, ParameterId kernel_id, std::size_t in,
                 std::size_t out, std::size_t kernel, std::size_t stride);
/// Scale (ones), shift (zeros) and the two running-statistic buffers.
BatchNormOp declare_batchnorm(ParameterLayout& layout, const std::string& instance, std::size_t channels);

std::string describe(const Op& op);

}  // namespace shareconv
