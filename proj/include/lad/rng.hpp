#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace lad::rng {

/// Stream ids for the seed-splitting scheme. Every consumer of randomness
/// derives its generator from (run seed, stream id, sub index) so that the
/// order in which modules run never changes their draws.
enum class Stream : std::uint64_t {
  scene = 1,
  dropout = 2,
  intensity = 3,
  ransac = 4,
  encoder_init = 5,
  image_encoder = 6,
  training = 7,
  probe = 8,
  corruption = 9,
  misalignment = 10,
  gradcheck = 11,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t sub = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream))) + sub);
}

inline std::mt19937_64 make(std::uint64_t seed, Stream stream, std::uint64_t sub = 0) {
  return std::mt19937_64(derive_seed(seed, stream, sub));
}

/// Uniform real in [0, 1) from the top 53 bits; identical across standard libraries.
inline double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& gen, double lo, double hi) {
  return lo + (hi - lo) * uniform01(gen);
}

/// Uniform integer in [0, n) by rejection, portable across standard libraries.
inline std::uint64_t below(std::mt19937_64& gen, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = gen();
  } while (v >= limit);
  return v % n;
}

/// Standard normal via Box-Muller (portable, unlike std::normal_distribution).
inline double normal(std::mt19937_64& gen) {
  double u1 = uniform01(gen);
  while (u1 <= 0.0) u1 = uniform01(gen);
  const double u2 = uniform01(gen);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace lad::rng
