#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace ddprune {

using Rng = std::mt19937_64;

// 64-bit FNV-1a, used for stream naming and content digests.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t value);

// Independent seed for a named sub-stream ("teacher.3", "distill.step.17").
// Results never depend on the order streams are requested in.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

inline Rng make_rng(std::uint64_t root, std::string_view stream) {
  return Rng(derive_seed(root, stream));
}

}  // namespace ddprune
