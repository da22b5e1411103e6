#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mwuf {

// splitmix64 finalizer.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a 64 over a component name; gives each component a stable stream id.
inline uint64_t stream_id(std::string_view name) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// All randomness flows from one root seed. Streams are split per component
// name plus a counter, so adding a consumer never perturbs existing streams.
inline uint64_t derive_seed(uint64_t root, std::string_view component, uint64_t counter = 0) {
  return mix64(mix64(root ^ stream_id(component)) + counter);
}

inline std::mt19937_64 make_rng(uint64_t root, std::string_view component, uint64_t counter = 0) {
  return std::mt19937_64(derive_seed(root, component, counter));
}

}  // namespace mwuf
