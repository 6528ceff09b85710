#include "shareconv/tensor.hpp"

#include <bit>
#include <cstring>
#include <functional>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "shareconv/binary_io.hpp"
#include "shareconv/hash.hpp"

namespace shareconv {

std::string format_shape(std::span<const std::size_t> extents) {
  return fmt::format("[{}]", fmt::join(extents, "x"));
}

std::size_t shape_size(std::span<const std::size_t> extents) {
  return std::accumulate(extents.begin(), extents.end(), std::size_t{1}, std::multiplies<>());
}

void require_same_shape(const Shape& expected, const Shape& actual, const char* what) {
  if (expected != actual) {
    throw ShapeError(fmt::format("{}: expected shape {}, got {}", what, format_shape(expected),
                                 format_shape(actual)));
  }
}

namespace {

void check_extents(const Shape& extents) {
  for (std::size_t e : extents) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + format_shape(extents));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape extents, T fill) : extents_(std::move(extents)) {
  check_extents(extents_);
  data_.assign(shape_size(extents_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape extents, std::vector<T> data)
    : extents_(std::move(extents)), data_(std::move(data)) {
  check_extents(extents_);
  if (shape_size(extents_) != data_.size()) {
    throw ShapeError(fmt::format("shape {} needs {} elements, got {}", format_shape(extents_),
                                 shape_size(extents_), data_.size()));
  }
}

template <typename T>
void Tensor<T>::fill(T value) noexcept {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape extents) const {
  return Tensor(std::move(extents), data_);
}

template <typename T>
Tensor<T>& Tensor<T>::operator+=(const Tensor& other) {
  require_same_shape(extents_, other.extents_, "tensor add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& tensor) {
  io::write_u32(out, static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t e : tensor.extents()) io::write_u32(out, static_cast<std::uint32_t>(e));
  io::write_u8(out, static_cast<std::uint8_t>(precision_of<T>));
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (T v : tensor.data()) {
    const auto bits = std::bit_cast<Bits>(v);
    if constexpr (sizeof(T) == 4) {
      io::write_u32(out, bits);
    } else {
      io::write_u64(out, bits);
    }
  }
  if (!out) throw Error("failed to write tensor");
}

template <typename T>
Tensor<T> read_tensor(std::istream& in) {
  const std::uint32_t rank = io::read_u32(in);
  if (rank > 8) throw Error(fmt::format("tensor rank {} is not supported", rank));
  Shape extents(rank);
  for (auto& e : extents) e = io::read_u32(in);
  const auto tag = io::read_u8(in);
  if (tag > 1) throw Error(fmt::format("unknown precision tag {}", tag));
  if (static_cast<Precision>(tag) != precision_of<T>) {
    throw Error(fmt::format("tensor precision tag {} does not match requested {}", tag,
                            static_cast<int>(precision_of<T>)));
  }
  for (std::size_t e : extents) {
    if (e == 0) throw ShapeError("serialized tensor has a zero extent");
  }
  std::vector<T> data(shape_size(extents));
  for (auto& v : data) {
    if constexpr (sizeof(T) == 4) {
      v = std::bit_cast<float>(io::read_u32(in));
    } else {
      v = std::bit_cast<double>(io::read_u64(in));
    }
  }
  return Tensor<T>(std::move(extents), std::move(data));
}

template <typename T>
std::uint64_t content_hash(const Tensor<T>& tensor) {
  Fnv1a h;
  h.update(std::span<const std::size_t>(tensor.extents()));
  h.update(tensor.data());
  return h.digest();
}

template class Tensor<float>;
template class Tensor<double>;
template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor<float>(std::istream&);
template Tensor<double> read_tensor<double>(std::istream&);
template std::uint64_t content_hash(const Tensor<float>&);
template std::uint64_t content_hash(const Tensor<double>&);

}  // namespace shareconv
