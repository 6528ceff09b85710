#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace shareconv {

/// 64-bit FNV-1a, used for content hashes of parameters and datasets.
class Fnv1a {
 public:
  void update(const void* data, std::size_t bytes) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  void update(std::span<const T> values) noexcept {
    update(values.data(), values.size_bytes());
  }
  void update(std::string_view s) noexcept { update(s.data(), s.size()); }
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace shareconv
