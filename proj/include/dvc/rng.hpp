#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace dvc {

/// Engine seeded from a list of 64-bit words (each split into two 32-bit
/// halves for std::seed_seq). Streams for different keys are independent.
inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t k : keys) {
    words.push_back(static_cast<std::uint32_t>(k & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

}  // namespace dvc
