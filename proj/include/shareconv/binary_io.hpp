#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

// Little-endian primitives shared by tensor and checkpoint serialization.
namespace shareconv::io {

void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_string(std::ostream& out, const std::string& s);

std::uint8_t read_u8(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
std::string read_string(std::istream& in, std::size_t max_length = 1u << 20);

}  // namespace shareconv::io
