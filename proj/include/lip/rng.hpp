#pragma once

#include <cstdint>

namespace lip {

// splitmix64 finalizer; used to derive independent sub-seeds from a master
// seed plus a stream tag, so parallel-safe streams never overlap by index.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace lip
