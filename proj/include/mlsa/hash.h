#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mlsa {

// 64-bit FNV-1a. Used wherever a platform-independent hash is part of an
// observable contract: partition assignment, dedup fingerprints, synthesized
// document ids and vocabulary hashes.
constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a64(std::string_view data,
                                std::uint64_t seed = kFnvOffsetBasis) {
  std::uint64_t h = seed;
  for (char c : data) {
    h ^= static_cast<std::uint8_t>(c);
    h *= kFnvPrime;
  }
  return h;
}

// Lowercase, zero-padded 16-digit hex.
std::string to_hex(std::uint64_t value);

}  // namespace mlsa
