#pragma once

// Binary parameter checkpoints. Layout, all integers little-endian:
//   magic "CPNW" | u32 version (1) | records until EOF
//   record: u32 name length | name bytes | u32 rank | u32 extent per axis
//           | float64 values (IEEE-754 bit pattern, little-endian)

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "cpn/tensor.hpp"

namespace cpn {

namespace detail {

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
  char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                   static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

inline void write_f64_le(std::ostream& out, double v) {
  const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

inline std::uint32_t read_u32_le(std::istream& in, const std::string& path) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4))
    throw data_error("checkpoint '" + path + "': truncated at offset " +
                     std::to_string(static_cast<long long>(in.gcount())));
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

inline double read_f64_le(std::istream& in, const std::string& path) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8))
    throw data_error("checkpoint '" + path + "': truncated value data");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

}  // namespace detail

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, Tensor>>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("checkpoint '" + path + "': cannot open for writing");
  out.write("CPNW", 4);
  detail::write_u32_le(out, kCheckpointVersion);
  for (const auto& [name, tensor] : params) {
    detail::write_u32_le(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32_le(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t i = 0; i < tensor.rank(); ++i)
      detail::write_u32_le(out, static_cast<std::uint32_t>(tensor.dim(i)));
    for (double v : tensor.values()) detail::write_f64_le(out, v);
  }
  if (!out) throw data_error("checkpoint '" + path + "': write failed");
}

inline std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("checkpoint '" + path + "': cannot open");
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "CPNW")
    throw data_error("checkpoint '" + path + "': bad magic, not a checkpoint file");
  const std::uint32_t version = detail::read_u32_le(in, path);
  if (version != kCheckpointVersion)
    throw data_error("checkpoint '" + path + "': unsupported version " + std::to_string(version));

  std::vector<CheckpointEntry> entries;
  while (in.peek() != std::ifstream::traits_type::eof()) {
    CheckpointEntry e;
    const std::uint32_t name_len = detail::read_u32_le(in, path);
    e.name.resize(name_len);
    if (!in.read(e.name.data(), name_len))
      throw data_error("checkpoint '" + path + "': truncated parameter name");
    const std::uint32_t rank = detail::read_u32_le(in, path);
    if (rank > 8) throw data_error("checkpoint '" + path + "': implausible rank " + std::to_string(rank));
    e.shape.resize(rank);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      e.shape[i] = detail::read_u32_le(in, path);
      count *= e.shape[i];
    }
    e.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) e.values[i] = detail::read_f64_le(in, path);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace cpn
