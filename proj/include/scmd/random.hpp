// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace scmd {

using Rng = std::mt19937_64;

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a base seed and a salt path.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> salts) {
  std::uint64_t s = mix64(base);
  for (std::uint64_t v : salts) s = mix64(s ^ mix64(v));
  return s;
}

}  // namespace scmd
