#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace kglp::num {

using Rng = std::mt19937_64;

// Named sub-streams of one master seed; ablations only perturb their own stream.
enum class Stream : std::uint64_t {
  init = 1,
  shuffle = 2,
  dropout = 3,
  negatives = 4,
  zero_shot = 5,
  grl_init = 6,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(stream))) + index);
}

inline Rng make_rng(std::uint64_t master, Stream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(master, stream, index));
}

/// Uniform in [0, 1) from the top 53 bits; identical on every standard library.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Unbiased index in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw;
  do {
    draw = rng();
  } while (draw >= limit);
  return static_cast<std::size_t>(draw % bound);
}

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_index(rng, i)]);
  }
}

}  // namespace kglp::num
