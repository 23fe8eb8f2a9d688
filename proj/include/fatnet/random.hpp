#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fatnet {

using Rng = std::mt19937_64;

/// 64-bit FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/**
 * Independent generator for a named purpose ("init", "shuffle", ...)
 * derived from the master seed, optionally further split by an index.
 */
inline Rng substream(std::uint64_t master, std::string_view name,
                     std::uint64_t index = 0) {
  const std::uint64_t h = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(master),
                    static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(h),
                    static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

}  // namespace fatnet
