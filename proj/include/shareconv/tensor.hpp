#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <type_traits>
#include <vector>

#include "shareconv/error.hpp"

namespace shareconv {

using Shape = std::vector<std::size_t>;

enum class Precision : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
inline constexpr Precision precision_of = std::is_same_v<T, float> ? Precision::f32 : Precision::f64;

std::size_t shape_size(std::span<const std::size_t> extents);

/// Dense row-major tensor. The last extent varies fastest.
///
/// Activations are N x C x H x W, convolution kernels O x I x Kh x Kw. The
/// element type fixes the precision: `Tensor<float>` for training,
/// `Tensor<double>` for gradient checks.
template <typename T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "Tensor supports 32-bit and 64-bit floating point only");

 public:
  using value_type = T;

  /// A rank-0 tensor holding a single zero.
  Tensor() : data_(1, T{0}) {}
  explicit Tensor(Shape extents, T fill = T{0});
  Tensor(Shape extents, std::vector<T> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.extents_); }

  const Shape& extents() const noexcept { return extents_; }
  std::size_t rank() const noexcept { return extents_.size(); }
  std::size_t extent(std::size_t axis) const { return extents_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  static constexpr Precision precision() noexcept { return precision_of<T>; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Element of a rank-4 tensor.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[((n * extents_[1] + c) * extents_[2] + h) * extents_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[((n * extents_[1] + c) * extents_[2] + h) * extents_[3] + w];
  }

  void fill(T value) noexcept;
  bool same_shape(const Tensor& other) const noexcept { return extents_ == other.extents_; }

  /// Copy with new extents of the same total size.
  Tensor reshaped(Shape extents) const;

  Tensor& operator+=(const Tensor& other);

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(extents_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape extents_;
  std::vector<T> data_;
};

/// Throws ShapeError naming both shapes unless they are equal.
void require_same_shape(const Shape& expected, const Shape& actual, const char* what);

/// Binary form: rank (u32), extents (u32 each), precision tag (u8), raw
/// little-endian elements.
template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& tensor);

template <typename T>
Tensor<T> read_tensor(std::istream& in);

template <typename T>
std::uint64_t content_hash(const Tensor<T>& tensor);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace shareconv
