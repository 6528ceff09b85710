#include "shareconv/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace shareconv {

std::size_t output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                          std::size_t padding) {
  if (kernel == 0 || stride == 0) throw ShapeError("kernel and stride must be positive");
  const std::size_t padded = input + 2 * padding;
  if (padded < kernel) {
    throw ShapeError(fmt::format("window {} does not fit input extent {} with padding {}", kernel,
                                 input, padding));
  }
  return (padded - kernel) / stride + 1;
}

namespace {

void require_rank(const Shape& extents, std::size_t rank, const char* what) {
  if (extents.size() != rank) {
    throw ShapeError(fmt::format("{}: expected rank {}, got shape {}", what, rank,
                                 format_shape(extents)));
  }
}

struct ConvDims {
  std::size_t n, ci, h, w, co, kh, kw, ho, wo;
  std::size_t patch() const { return ci * kh * kw; }
  std::size_t pixels() const { return ho * wo; }
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& input, const Tensor<T>& kernel, const ConvGeometry& geom) {
  require_rank(input.extents(), 4, "conv2d input");
  require_rank(kernel.extents(), 4, "conv2d kernel");
  const auto& x = input.extents();
  const auto& k = kernel.extents();
  if (k[1] != x[1] || k[2] != geom.kernel_h || k[3] != geom.kernel_w) {
    throw ShapeError(fmt::format("conv2d: kernel {} incompatible with input {} (geometry {}x{})",
                                 format_shape(k), format_shape(x), geom.kernel_h, geom.kernel_w));
  }
  ConvDims d{x[0], x[1], x[2], x[3], k[0], k[2], k[3], 0, 0};
  d.ho = output_extent(d.h, d.kh, geom.stride, geom.padding);
  d.wo = output_extent(d.w, d.kw, geom.stride, geom.padding);
  return d;
}

// Unfolds one image (C x H x W) into a (C*Kh*Kw) x (Ho*Wo) matrix.
template <typename T>
void im2col(const T* img, const ConvDims& d, const ConvGeometry& g, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.stride);
  const auto H = static_cast<std::ptrdiff_t>(d.h);
  const auto W = static_cast<std::ptrdiff_t>(d.w);
  for (std::size_t c = 0; c < d.ci; ++c) {
    const T* plane = img + c * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        T* row = col + ((c * d.kh + ky) * d.kw + kx) * d.pixels();
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride + static_cast<std::ptrdiff_t>(ky) - pad;
          T* out = row + oy * d.wo;
          if (iy < 0 || iy >= H) {
            std::fill(out, out + d.wo, T{0});
            continue;
          }
          const T* src = plane + iy * W;
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride + static_cast<std::ptrdiff_t>(kx) - pad;
            out[ox] = (ix >= 0 && ix < W) ? src[ix] : T{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters (adds) columns back into an image.
template <typename T>
void col2im(const T* col, const ConvDims& d, const ConvGeometry& g, T* img) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.stride);
  const auto H = static_cast<std::ptrdiff_t>(d.h);
  const auto W = static_cast<std::ptrdiff_t>(d.w);
  for (std::size_t c = 0; c < d.ci; ++c) {
    T* plane = img + c * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        const T* row = col + ((c * d.kh + ky) * d.kw + kx) * d.pixels();
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride + static_cast<std::ptrdiff_t>(ky) - pad;
          if (iy < 0 || iy >= H) continue;
          T* dst = plane + iy * W;
          const T* in = row + oy * d.wo;
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride + static_cast<std::ptrdiff_t>(kx) - pad;
            if (ix >= 0 && ix < W) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvDims& d, const ConvGeometry& g) {
  return d.kh == 1 && d.kw == 1 && g.stride == 1 && g.padding == 0;
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const ConvGeometry& geom) {
  const ConvDims d = conv_dims(input, kernel, geom);
  Tensor<T> output({d.n, d.co, d.ho, d.wo});
  const std::size_t K = d.patch();
  const std::size_t P = d.pixels();
  std::vector<T> col(is_pointwise(d, geom) ? 0 : K * P);
  const T* w = kernel.raw();
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* img = input.raw() + n * d.ci * d.h * d.w;
    const T* cols = img;
    if (!col.empty()) {
      im2col(img, d, geom, col.data());
      cols = col.data();
    }
    T* out = output.raw() + n * d.co * P;
    for (std::size_t o = 0; o < d.co; ++o) {
      T* orow = out + o * P;
      const T* wrow = w + o * K;
      for (std::size_t k = 0; k < K; ++k) {
        const T a = wrow[k];
        const T* crow = cols + k * P;
        for (std::size_t p = 0; p < P; ++p) orow[p] += a * crow[p];
      }
    }
  }
  return output;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                             const ConvGeometry& geom, const Tensor<T>& grad_output) {
  const ConvDims d = conv_dims(input, kernel, geom);
  require_same_shape(Shape{d.n, d.co, d.ho, d.wo}, grad_output.extents(), "conv2d_backward grad_output");
  ConvGrads<T> g{Tensor<T>::zeros_like(input), Tensor<T>::zeros_like(kernel)};
  const std::size_t K = d.patch();
  const std::size_t P = d.pixels();
  const bool pointwise = is_pointwise(d, geom);
  std::vector<T> col(pointwise ? 0 : K * P);
  std::vector<T> grad_col(pointwise ? 0 : K * P);
  const T* w = kernel.raw();
  T* gw = g.grad_kernel.raw();
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* img = input.raw() + n * d.ci * d.h * d.w;
    const T* gout = grad_output.raw() + n * d.co * P;
    T* gimg = g.grad_input.raw() + n * d.ci * d.h * d.w;
    const T* cols = img;
    T* gcols = gimg;
    if (!pointwise) {
      im2col(img, d, geom, col.data());
      cols = col.data();
      std::fill(grad_col.begin(), grad_col.end(), T{0});
      gcols = grad_col.data();
    }
    for (std::size_t o = 0; o < d.co; ++o) {
      const T* grow = gout + o * P;
      T* gwrow = gw + o * K;
      const T* wrow = w + o * K;
      for (std::size_t k = 0; k < K; ++k) {
        const T* crow = cols + k * P;
        T acc{0};
        for (std::size_t p = 0; p < P; ++p) acc += grow[p] * crow[p];
        gwrow[k] += acc;
        const T a = wrow[k];
        T* gcrow = gcols + k * P;
        for (std::size_t p = 0; p < P; ++p) gcrow[p] += a * grow[p];
      }
    }
    if (!pointwise) col2im(grad_col.data(), d, geom, gimg);
  }
  return g;
}

template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor<T>& input, const Tensor<T>& scale,
                                     const Tensor<T>& shift, const RunningStats<T>& running,
                                     Mode mode, const BatchNormConfig& config) {
  require_rank(input.extents(), 4, "batchnorm input");
  const std::size_t N = input.extent(0), C = input.extent(1), HW = input.extent(2) * input.extent(3);
  const Shape per_channel{C};
  require_same_shape(per_channel, scale.extents(), "batchnorm scale");
  require_same_shape(per_channel, shift.extents(), "batchnorm shift");
  require_same_shape(per_channel, running.mean.extents(), "batchnorm running mean");
  require_same_shape(per_channel, running.var.extents(), "batchnorm running var");
  const std::size_t M = N * HW;
  if (mode == Mode::train && M < 2) {
    throw ShapeError(fmt::format("batchnorm in train mode needs at least 2 values per channel, got {}",
                                 M));
  }

  BatchNormResult<T> r{Tensor<T>::zeros_like(input), running, {}};
  r.cache.mode = mode;
  r.cache.normalized = Tensor<T>::zeros_like(input);
  r.cache.inv_std.resize(C);
  r.cache.scale = scale;
  const T* x = input.raw();
  T* xh = r.cache.normalized.raw();
  T* y = r.output.raw();
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (mode == Mode::train) {
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) mean += p[i];
      }
      mean /= static_cast<double>(M);
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double dv = p[i] - mean;
          var += dv * dv;
        }
      }
      const double unbiased = var / static_cast<double>(M - 1);
      var /= static_cast<double>(M);
      r.running.mean[c] = static_cast<T>((1.0 - config.momentum) * running.mean[c] + config.momentum * mean);
      r.running.var[c] = static_cast<T>((1.0 - config.momentum) * running.var[c] + config.momentum * unbiased);
    } else {
      mean = running.mean[c];
      var = running.var[c];
    }
    const T inv_std = static_cast<T>(1.0 / std::sqrt(var + config.epsilon));
    const T m = static_cast<T>(mean);
    r.cache.inv_std[c] = inv_std;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const T v = (x[base + i] - m) * inv_std;
        xh[base + i] = v;
        y[base + i] = scale[c] * v + shift[c];
      }
    }
  }
  return r;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& grad_output) {
  require_same_shape(cache.normalized.extents(), grad_output.extents(), "batchnorm_backward grad_output");
  const auto& e = grad_output.extents();
  const std::size_t N = e[0], C = e[1], HW = e[2] * e[3];
  const T M = static_cast<T>(N * HW);
  BatchNormGrads<T> g{Tensor<T>::zeros_like(grad_output), Tensor<T>({C}), Tensor<T>({C})};
  const T* dy = grad_output.raw();
  const T* xh = cache.normalized.raw();
  T* dx = g.grad_input.raw();
  for (std::size_t c = 0; c < C; ++c) {
    T sum_dy{0};
    T sum_dy_xh{0};
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        sum_dy += dy[base + i];
        sum_dy_xh += dy[base + i] * xh[base + i];
      }
    }
    g.grad_shift[c] = sum_dy;
    g.grad_scale[c] = sum_dy_xh;
    const T k = cache.scale[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        if (cache.mode == Mode::train) {
          dx[base + i] = k / M * (M * dy[base + i] - sum_dy - xh[base + i] * sum_dy_xh);
        } else {
          dx[base + i] = k * dy[base + i];
        }
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_output) {
  require_same_shape(input.extents(), grad_output.extents(), "relu_backward");
  Tensor<T> g = grad_output;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(input[i] > T{0})) g[i] = T{0};
  }
  return g;
}

template <typename T>
MaxPoolResult<T> max_pool(const Tensor<T>& input, const ConvGeometry& window) {
  require_rank(input.extents(), 4, "max_pool input");
  const auto& e = input.extents();
  const std::size_t N = e[0], C = e[1], H = e[2], W = e[3];
  const std::size_t Ho = output_extent(H, window.kernel_h, window.stride, window.padding);
  const std::size_t Wo = output_extent(W, window.kernel_w, window.stride, window.padding);
  MaxPoolResult<T> r{Tensor<T>({N, C, Ho, Wo}), {e, {}}};
  r.cache.argmax.resize(r.output.size());
  const auto pad = static_cast<std::ptrdiff_t>(window.padding);
  std::size_t out_index = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const std::size_t plane = nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox, ++out_index) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_index = plane;
        bool found = false;
        for (std::size_t ky = 0; ky < window.kernel_h; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * window.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t kx = 0; kx < window.kernel_w; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * window.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            const std::size_t idx = plane + static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix);
            if (!found || input[idx] > best) {
              best = input[idx];
              best_index = idx;
              found = true;
            }
          }
        }
        if (!found) throw ShapeError("max_pool window covers only padding");
        r.output[out_index] = best;
        r.cache.argmax[out_index] = best_index;
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> max_pool_backward(const MaxPoolCache& cache, const Tensor<T>& grad_output) {
  if (grad_output.size() != cache.argmax.size()) {
    throw ShapeError(fmt::format("max_pool_backward: grad_output {} does not match cached output size {}",
                                 format_shape(grad_output.extents()), cache.argmax.size()));
  }
  Tensor<T> g(cache.input_extents);
  for (std::size_t i = 0; i < cache.argmax.size(); ++i) g[cache.argmax[i]] += grad_output[i];
  return g;
}

template <typename T>
Tensor<T> avg_pool_global(const Tensor<T>& input) {
  require_rank(input.extents(), 4, "avg_pool_global input");
  const std::size_t NC = input.extent(0) * input.extent(1);
  const std::size_t HW = input.extent(2) * input.extent(3);
  Tensor<T> out({input.extent(0), input.extent(1)});
  for (std::size_t i = 0; i < NC; ++i) {
    T acc{0};
    for (std::size_t j = 0; j < HW; ++j) acc += input[i * HW + j];
    out[i] = acc / static_cast<T>(HW);
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool_global_backward(const Shape& input_extents, const Tensor<T>& grad_output) {
  require_rank(input_extents, 4, "avg_pool_global_backward");
  require_same_shape(Shape{input_extents[0], input_extents[1]}, grad_output.extents(),
                     "avg_pool_global_backward grad_output");
  const std::size_t HW = input_extents[2] * input_extents[3];
  Tensor<T> g(input_extents);
  for (std::size_t i = 0; i < grad_output.size(); ++i) {
    const T v = grad_output[i] / static_cast<T>(HW);
    for (std::size_t j = 0; j < HW; ++j) g[i * HW + j] = v;
  }
  return g;
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(input.extents(), 2, "linear input");
  require_rank(weight.extents(), 2, "linear weight");
  const std::size_t N = input.extent(0), D = input.extent(1), K = weight.extent(0);
  if (weight.extent(1) != D) {
    throw ShapeError(fmt::format("linear: weight {} incompatible with input {}",
                                 format_shape(weight.extents()), format_shape(input.extents())));
  }
  require_same_shape(Shape{K}, bias.extents(), "linear bias");
  Tensor<T> out({N, K});
  for (std::size_t n = 0; n < N; ++n) {
    const T* x = input.raw() + n * D;
    for (std::size_t k = 0; k < K; ++k) {
      const T* w = weight.raw() + k * D;
      T acc = bias[k];
      for (std::size_t d = 0; d < D; ++d) acc += w[d] * x[d];
      out[n * K + k] = acc;
    }
  }
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& input, const Tensor<T>& weight,
                               const Tensor<T>& grad_output) {
  require_rank(input.extents(), 2, "linear_backward input");
  const std::size_t N = input.extent(0), D = input.extent(1), K = weight.extent(0);
  require_same_shape(Shape{K, D}, weight.extents(), "linear_backward weight");
  require_same_shape(Shape{N, K}, grad_output.extents(), "linear_backward grad_output");
  LinearGrads<T> g{Tensor<T>::zeros_like(input), Tensor<T>::zeros_like(weight), Tensor<T>({K})};
  for (std::size_t n = 0; n < N; ++n) {
    const T* x = input.raw() + n * D;
    T* gx = g.grad_input.raw() + n * D;
    for (std::size_t k = 0; k < K; ++k) {
      const T go = grad_output[n * K + k];
      const T* w = weight.raw() + k * D;
      T* gw = g.grad_weight.raw() + k * D;
      g.grad_bias[k] += go;
      for (std::size_t d = 0; d < D; ++d) {
        gw[d] += go * x[d];
        gx[d] += go * w[d];
      }
    }
  }
  return g;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits.extents(), 2, "softmax_cross_entropy logits");
  const std::size_t N = logits.extent(0), K = logits.extent(1);
  if (labels.size() != N) {
    throw ShapeError(fmt::format("softmax_cross_entropy: {} labels for {} rows", labels.size(), N));
  }
  LossResult<T> r{T{0}, Tensor<T>::zeros_like(logits)};
  const T inv_n = T{1} / static_cast<T>(N);
  for (std::size_t n = 0; n < N; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= K) {
      throw Error(fmt::format("label {} out of range [0, {})", label, K));
    }
    const T* z = logits.raw() + n * K;
    T* g = r.grad_logits.raw() + n * K;
    const T zmax = *std::max_element(z, z + K);
    T sum{0};
    for (std::size_t k = 0; k < K; ++k) {
      g[k] = std::exp(z[k] - zmax);
      sum += g[k];
    }
    const T log_sum = std::log(sum) + zmax;
    r.loss += log_sum - z[label];
    for (std::size_t k = 0; k < K; ++k) g[k] = g[k] / sum * inv_n;
    g[label] -= inv_n;
  }
  r.loss *= inv_n;
  return r;
}

template <typename T>
DropoutResult<T> dropout(const Tensor<T>& input, double rate, Rng& rng, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(fmt::format("dropout rate {} outside [0, 1)", rate));
  if (mode == Mode::eval || rate == 0.0) return {input, {}};
  DropoutResult<T> r{input, std::vector<T>(input.size())};
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::bernoulli_distribution drop(rate);
  for (std::size_t i = 0; i < input.size(); ++i) {
    r.mask[i] = drop(rng) ? T{0} : keep_scale;
    r.output[i] *= r.mask[i];
  }
  return r;
}

template <typename T>
Tensor<T> dropout_backward(std::span<const T> mask, const Tensor<T>& grad_output) {
  if (mask.empty()) return grad_output;
  if (mask.size() != grad_output.size()) throw ShapeError("dropout_backward: mask size mismatch");
  Tensor<T> g = grad_output;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
  return g;
}

#define SHARECONV_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&);    \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&, \
                                        const Tensor<T>&);                                       \
  template BatchNormResult<T> batchnorm_forward(const Tensor<T>&, const Tensor<T>&,              \
                                                const Tensor<T>&, const RunningStats<T>&, Mode,  \
                                                const BatchNormConfig&);                         \
  template BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>&, const Tensor<T>&);     \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                          \
  template MaxPoolResult<T> max_pool(const Tensor<T>&, const ConvGeometry&);                     \
  template Tensor<T> max_pool_backward(const MaxPoolCache&, const Tensor<T>&);                   \
  template Tensor<T> avg_pool_global(const Tensor<T>&);                                          \
  template Tensor<T> avg_pool_global_backward(const Shape&, const Tensor<T>&);                   \
  template Tensor<T> linear_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template LinearGrads<T> linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template LossResult<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);          \
  template DropoutResult<T> dropout(const Tensor<T>&, double, Rng&, Mode);                       \
  template Tensor<T> dropout_backward(std::span<const T>, const Tensor<T>&);

SHARECONV_INSTANTIATE_OPS(float)
SHARECONV_INSTANTIATE_OPS(double)

}  // namespace shareconv
