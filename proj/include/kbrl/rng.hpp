#ifndef KBRL_RNG_HPP_
#define KBRL_RNG_HPP_

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace kbrl {

// 64-bit FNV-1a. Used for feature hashing and seed derivation, so the value
// must never change between releases.
std::uint64_t fnv1a64(std::string_view text);

// One splitmix64 step applied to `value`; a cheap bijective mixer.
std::uint64_t splitmix64(std::uint64_t value);

// Seed for a named stream derived from a master seed:
// splitmix64(master ^ fnv1a64(name)).
std::uint64_t derive_seed(std::uint64_t master, std::string_view name);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

// Deterministic random stream. Only the raw mt19937_64 output is consumed, so
// draws are identical across standard library implementations.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53 bits of randomness.
  double uniform();
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  // Index drawn from a probability vector by inverse CDF.
  std::size_t categorical(std::span<const double> probabilities);

 private:
  std::mt19937_64 engine_;
};

}  // namespace kbrl

#endif  // KBRL_RNG_HPP_
