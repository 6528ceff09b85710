#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>

namespace shareconv {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when tensor extents do not line up for an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised by the optimizer when a gradient holds NaN or Inf.
class NonFiniteGradient : public Error {
 public:
  NonFiniteGradient(std::string slot, const std::string& what)
      : Error(what), slot_(std::move(slot)) {}
  const std::string& slot() const noexcept { return slot_; }

 private:
  std::string slot_;
};

std::string format_shape(std::span<const std::size_t> extents);

}  // namespace shareconv
