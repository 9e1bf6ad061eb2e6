// rng.hpp -- counter-based random number generation.
//
// Every random quantity in the library is a pure function of (seed, stream
// tag, index): a Philox4x32-10 block keyed by the seed produces four 32-bit
// words, which become two 53-bit uniforms in (0,1) and then a Box-Muller
// Gaussian pair. Arbitrary indices are addressable without generating
// predecessors, so sampling is reproducible under any evaluation order.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

#include "protocert/common.hpp"

namespace protocert {

namespace detail {

inline void philox_round(std::array<std::uint32_t, 4>& c, std::uint32_t k0, std::uint32_t k1) {
  const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
  const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
  const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const auto lo0 = static_cast<std::uint32_t>(p0);
  const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const auto lo1 = static_cast<std::uint32_t>(p1);
  c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
}

/// Philox4x32-10 block function (Salmon et al. counter-based generator).
inline std::array<std::uint32_t, 4> philox_block(std::uint64_t key,
                                                 std::array<std::uint32_t, 4> counter) {
  auto k0 = static_cast<std::uint32_t>(key);
  auto k1 = static_cast<std::uint32_t>(key >> 32);
  for (int round = 0; round < 10; ++round) {
    philox_round(counter, k0, k1);
    k0 += 0x9E3779B9u;
    k1 += 0xBB67AE85u;
  }
  return counter;
}

/// Map 64 random bits to a double in the open interval (0,1).
inline double bits_to_open_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace detail

/// Logical channels, so one user seed never reuses counter space across purposes.
enum class rng_stream : std::uint32_t {
  smoothing_noise = 1,
  episode_gen = 2,
  train_init = 3,
  train_aug = 4,
  attack = 5,
  test = 6,
};

/// Two independent N(0,1) draws from one Philox block.
inline std::array<double, 2> gaussian_pair(std::uint64_t seed, rng_stream stream,
                                           std::uint64_t index, std::uint32_t block) {
  const auto words = detail::philox_block(
      seed, {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
             block, static_cast<std::uint32_t>(stream)});
  const std::uint64_t a = (std::uint64_t{words[0]} << 32) | words[1];
  const std::uint64_t b = (std::uint64_t{words[2]} << 32) | words[3];
  const double u1 = detail::bits_to_open_unit(a);
  const double u2 = detail::bits_to_open_unit(b);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double t = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(t), r * std::sin(t)};
}

inline double uniform_at(std::uint64_t seed, rng_stream stream, std::uint64_t index,
                         std::uint32_t block = 0) {
  const auto words = detail::philox_block(
      seed, {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
             block, static_cast<std::uint32_t>(stream)});
  return detail::bits_to_open_unit((std::uint64_t{words[0]} << 32) | words[1]);
}

/// Fill `out` with iid N(0,1) values addressed by (seed, stream, index).
inline void fill_gaussian(std::uint64_t seed, rng_stream stream, std::uint64_t index,
                          std::span<double> out) {
  std::uint32_t block = 0;
  std::size_t i = 0;
  while (i + 1 < out.size()) {
    const auto z = gaussian_pair(seed, stream, index, block++);
    out[i++] = z[0];
    out[i++] = z[1];
  }
  if (i < out.size()) out[i] = gaussian_pair(seed, stream, index, block)[0];
}

/// Derive an independent sub-seed, used to give each point / step its own key.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Sequential convenience over the counter-based core: deterministic draws
/// for code that does not need index addressability (training, attacks).
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, rng_stream stream) : seed_(seed), stream_(stream) {}

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const auto z = gaussian_pair(seed_, stream_, index_++, 0);
    spare_ = z[1];
    have_spare_ = true;
    return z[0];
  }

  double uniform() {
    have_spare_ = false;
    return uniform_at(seed_, stream_, index_++, 1);
  }

  void fill_gaussian_vec(Vec& out) {
    for (double& x : out) x = gaussian();
  }

 private:
  std::uint64_t seed_;
  rng_stream stream_;
  std::uint64_t index_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace protocert
