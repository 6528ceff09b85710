#pragma once

// Reference implementations written independently of the library: plain
// loops over the definitions, no shared helpers. Tests compare the optimized
// code against these.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "shareconv/tensor.hpp"

namespace oracle {

using shareconv::Shape;
using shareconv::Tensor;

// Direct 7-loop cross-correlation with zero padding.
inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, std::size_t stride,
                             std::size_t pad) {
  const std::size_t N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  const std::size_t O = w.extent(0), KH = w.extent(2), KW = w.extent(3);
  const std::size_t OH = (H + 2 * pad - KH) / stride + 1, OW = (W + 2 * pad - KW) / stride + 1;
  Tensor<double> y({N, O, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          double acc = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t a = 0; a < KH; ++a)
              for (std::size_t b = 0; b < KW; ++b) {
                const long r = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                const long s = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                if (r < 0 || s < 0 || r >= static_cast<long>(H) || s >= static_cast<long>(W)) continue;
                acc += x.at(n, c, static_cast<std::size_t>(r), static_cast<std::size_t>(s)) * w.at(o, c, a, b);
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

// Training-mode batch normalization with biased batch variance.
inline Tensor<double> batchnorm_train(const Tensor<double>& x, const std::vector<double>& gamma,
                                      const std::vector<double>& beta, double eps) {
  const std::size_t N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  Tensor<double> y(x.extents());
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0, var = 0;
    const double m = static_cast<double>(N * H * W);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) mean += x.at(n, c, h, w);
    mean /= m;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) var += (x.at(n, c, h, w) - mean) * (x.at(n, c, h, w) - mean);
    var /= m;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
          y.at(n, c, h, w) = gamma[c] * (x.at(n, c, h, w) - mean) / std::sqrt(var + eps) + beta[c];
  }
  return y;
}

inline Tensor<double> max_pool(const Tensor<double>& x, std::size_t k, std::size_t stride, std::size_t pad) {
  const std::size_t N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  const std::size_t OH = (H + 2 * pad - k) / stride + 1, OW = (W + 2 * pad - k) / stride + 1;
  Tensor<double> y({N, C, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          double best = -std::numeric_limits<double>::infinity();
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) {
              const long r = static_cast<long>(i * stride + a) - static_cast<long>(pad);
              const long s = static_cast<long>(j * stride + b) - static_cast<long>(pad);
              if (r < 0 || s < 0 || r >= static_cast<long>(H) || s >= static_cast<long>(W)) continue;
              best = std::max(best, x.at(n, c, static_cast<std::size_t>(r), static_cast<std::size_t>(s)));
            }
          y.at(n, c, i, j) = best;
        }
  return y;
}

// Mean of -log softmax(z)[label], computed as logsumexp(z) - z[label].
inline double cross_entropy(const Tensor<double>& logits, const std::vector<int>& labels) {
  const std::size_t N = logits.extent(0), K = logits.extent(1);
  double total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, logits[n * K + k]);
    double s = 0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(logits[n * K + k] - mx);
    total += mx + std::log(s) - logits[n * K + static_cast<std::size_t>(labels[n])];
  }
  return total / static_cast<double>(N);
}

// Central differences of f with respect to every element of `x`.
inline Tensor<double> numeric_gradient(Tensor<double>& x, const std::function<double()>& f, double eps = 1e-6) {
  Tensor<double> g(x.extents());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f();
    x[i] = keep - eps;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline double max_abs(const Tensor<double>& a) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i]));
  return d;
}

// Weighted sum of every element; a linear probe that turns a tensor-valued
// function into a scalar one for gradient checks.
inline double probe(const Tensor<double>& y, const Tensor<double>& weights) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * weights[i];
  return s;
}

// Nearest-template classifier: the label whose template has the highest
// dot product with the mean-removed image.
inline int match_template(const std::vector<float>& image, const std::vector<std::vector<float>>& templates) {
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < templates.size(); ++c) {
    double score = 0, norm = 0;
    for (std::size_t i = 0; i < image.size(); ++i) {
      score += static_cast<double>(image[i]) * templates[c][i];
      norm += static_cast<double>(templates[c][i]) * templates[c][i];
    }
    score -= 0.5 * norm;
    if (score > best_score) {
      best_score = score;
      best = static_cast<int>(c);
    }
  }
  return best;
}

// Momentum recurrence unrolled by hand for one scalar weight.
struct ScalarMomentum {
  double w = 0, v = 0;
  void step(double g, double alpha, double gamma, double decay = 0) {
    v = gamma * v + alpha * (g + decay * w);
    w -= v;
  }
};

}  // namespace oracle
