#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace qsector {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Child seed for a named stream under a parent seed. Every random draw in the
// library comes from a generator seeded through this function.
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view name) {
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return splitmix64(parent ^ splitmix64(h));
}

inline std::mt19937_64 make_rng(std::uint64_t parent, std::string_view name) {
  return std::mt19937_64(derive_seed(parent, name));
}

}  // namespace qsector
