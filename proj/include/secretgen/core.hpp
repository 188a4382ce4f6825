#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace secretgen {

// Exit-status taxonomy used by the CLI.
struct validation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct capability_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct integrity_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// FNV-1a, used for config/artifact digests and per-image seed derivation.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s,
                           std::uint64_t h = 14695981039346656037ull) {
  return fnv1a(s.data(), s.size(), h);
}

inline std::string hex64(std::uint64_t v) {
  static const char* d = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = d[v & 0xf];
    v >>= 4;
  }
  return out;
}

// Derives an independent per-item seed from a global seed and an item id, so
// work order and parallelism never change results.
inline std::uint64_t derive_seed(std::uint64_t global_seed, const std::string& item_id) {
  std::uint64_t h = fnv1a(&global_seed, sizeof(global_seed));
  return fnv1a(item_id, h);
}

}  // namespace secretgen
