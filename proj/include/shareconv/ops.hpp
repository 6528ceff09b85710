#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "shareconv/tensor.hpp"

// Forward and backward kernels. Every function here is pure: outputs depend
// only on the arguments (dropout draws from the generator it is handed).
namespace shareconv {

enum class Mode { train, eval };

using Rng = std::mt19937_64;

/// Window geometry shared by convolution and max pooling. Padding is zero
/// padding applied symmetrically.
struct ConvGeometry {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static ConvGeometry square(std::size_t k, std::size_t stride = 1, std::size_t padding = 0) {
    return {k, k, stride, padding};
  }
  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

/// floor((input + 2*padding - kernel) / stride) + 1; throws ShapeError when
/// the window does not fit.
std::size_t output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                          std::size_t padding);

// ---- convolution (bias-free) ----

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const ConvGeometry& geom);

template <typename T>
struct ConvGrads {
  Tensor<T> grad_input;
  Tensor<T> grad_kernel;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                             const ConvGeometry& geom, const Tensor<T>& grad_output);

// ---- batch normalization ----

struct BatchNormConfig {
  double epsilon = 1e-5;
  double momentum = 0.1;  // weight of the new batch statistic in the running average
};

template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;
};

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::train;
  Tensor<T> normalized;     // x_hat
  std::vector<T> inv_std;   // per channel
  Tensor<T> scale;
};

template <typename T>
struct BatchNormResult {
  Tensor<T> output;
  RunningStats<T> running;
  BatchNormCache<T> cache;
};

/// Train mode normalizes with batch statistics and folds them into the
/// running averages (unbiased variance); eval mode uses the running values
/// and returns them unchanged.
template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor<T>& input, const Tensor<T>& scale,
                                     const Tensor<T>& shift, const RunningStats<T>& running,
                                     Mode mode, const BatchNormConfig& config = {});

template <typename T>
struct BatchNormGrads {
  Tensor<T> grad_input;
  Tensor<T> grad_scale;
  Tensor<T> grad_shift;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& grad_output);

// ---- activation ----

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

/// Gradient is masked by input > 0; the subgradient at 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_output);

// ---- pooling ----

struct MaxPoolCache {
  Shape input_extents;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

template <typename T>
struct MaxPoolResult {
  Tensor<T> output;
  MaxPoolCache cache;
};

/// Padded positions never win the max.
template <typename T>
MaxPoolResult<T> max_pool(const Tensor<T>& input, const ConvGeometry& window);

template <typename T>
Tensor<T> max_pool_backward(const MaxPoolCache& cache, const Tensor<T>& grad_output);

/// N x C x H x W -> N x C.
template <typename T>
Tensor<T> avg_pool_global(const Tensor<T>& input);

template <typename T>
Tensor<T> avg_pool_global_backward(const Shape& input_extents, const Tensor<T>& grad_output);

// ---- fully connected ----

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct LinearGrads {
  Tensor<T> grad_input;
  Tensor<T> grad_weight;
  Tensor<T> grad_bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& input, const Tensor<T>& weight,
                               const Tensor<T>& grad_output);

// ---- loss ----

template <typename T>
struct LossResult {
  T loss;
  Tensor<T> grad_logits;
};

/// Mean over the batch of -log softmax(logits)[label]; the gradient is
/// (softmax - onehot) / N.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// ---- dropout ----

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  std::vector<T> mask;  // 0 or 1/(1-rate) per element; empty means identity
};

/// Inverted dropout. Eval mode and rate 0 are the identity.
template <typename T>
DropoutResult<T> dropout(const Tensor<T>& input, double rate, Rng& rng, Mode mode);

template <typename T>
Tensor<T> dropout_backward(std::span<const T> mask, const Tensor<T>& grad_output);

}  // namespace shareconv
