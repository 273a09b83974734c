#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lip/tensor.hpp"

namespace lip {

// Binary tensor container. Layout, all integers little-endian:
//   magic "LIPT", version byte 1, entry count (u32)
//   per entry: name length (u32), name bytes, dtype code (u8: 0 = float64,
//   1 = float32), rank (u32), extents (u32 each), raw data.
// Rank 0 entries are scalars with a single value.
enum class Dtype : std::uint8_t { kF64 = 0, kF32 = 1 };

struct ContainerEntry {
  std::string name;
  Tensor tensor;
  Dtype dtype = Dtype::kF64;  // storage dtype; in-memory values are double
};

void write_container(const std::string& path, const std::vector<ContainerEntry>& entries);
std::vector<ContainerEntry> read_container(const std::string& path);

// First entry with the given name; throws IoError when absent.
const ContainerEntry& find_entry(const std::vector<ContainerEntry>& entries,
                                 const std::string& name);
bool has_entry(const std::vector<ContainerEntry>& entries, const std::string& name);

}  // namespace lip
