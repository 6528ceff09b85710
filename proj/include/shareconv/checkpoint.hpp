#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "shareconv/model.hpp"

// Checkpoint file, little-endian throughout:
//   "SHRN" | version u32 | architecture (u32 length + bytes) | shared u8 |
//   class count u32 | epoch u32 | entry count u32 | (name, tensor)...
// Entries cover every parameter slot followed by every buffer (batchnorm
// running statistics), in declaration order.
namespace shareconv {

inline constexpr std::uint32_t checkpoint_version = 1;

struct CheckpointHeader {
  std::string architecture;
  bool shared = false;
  std::uint32_t class_count = 0;
  std::uint32_t epoch = 0;
  friend bool operator==(const CheckpointHeader&, const CheckpointHeader&) = default;
};

template <typename T>
struct Checkpoint {
  CheckpointHeader header;
  std::vector<std::pair<std::string, Tensor<T>>> entries;
};

template <typename T>
void write_checkpoint(std::ostream& out, const CheckpointHeader& header, const ParameterRegistry<T>& params);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                     const ParameterRegistry<T>& params);

template <typename T>
Checkpoint<T> read_checkpoint(std::istream& in);

/// Copies checkpoint entries into a registry; names and shapes must match
/// exactly, with no entry missing or left over.
template <typename T>
void apply_checkpoint(const Checkpoint<T>& checkpoint, ParameterRegistry<T>& params);

/// Rebuilds the named architecture and loads its values.
template <typename T>
Model<T> load_model(const std::filesystem::path& path, CheckpointHeader* header_out = nullptr);

}  // namespace shareconv
