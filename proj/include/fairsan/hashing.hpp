#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>

#include "fairsan/dataset.hpp"

namespace fairsan {

/// 64-bit FNV-1a over raw bytes.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t state = 0xcbf29ce484222325ULL) {
  const unsigned char* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    state ^= bytes[i];
    state *= 0x100000001b3ULL;
  }
  return state;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t state = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), state);
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

/// Content hash of a dataset: exact double bit patterns plus labels and
/// groups, in sample order. Equal hashes mean bit-identical sample data.
inline std::uint64_t dataset_hash(const Dataset& dataset) {
  std::uint64_t state = 0xcbf29ce484222325ULL;
  const std::uint64_t dim = dataset.dim();
  state = fnv1a64(&dim, sizeof(dim), state);
  for (const Sample& s : dataset.samples()) {
    for (double v : s.x) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &v, sizeof(bits));
      state = fnv1a64(&bits, sizeof(bits), state);
    }
    const std::int32_t y = s.y, z = s.z;
    state = fnv1a64(&y, sizeof(y), state);
    state = fnv1a64(&z, sizeof(z), state);
  }
  return state;
}

}  // namespace fairsan
