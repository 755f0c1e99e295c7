#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tensorforge {

// Portable pseudo-random source. std::mt19937_64 is bit-exactly specified by
// the standard; the conversions below avoid the implementation-defined
// std::*_distribution classes so a seed reproduces the same stream everywhere.
// Child generators are derived with std::seed_seq, whose mixing algorithm is
// also fully specified.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(make_engine(seed, 0)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  // Independent generator for a named sub-stream; does not advance *this.
  Rng split(std::uint64_t stream) const { return Rng(seed_, stream); }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform on [0, bound) without modulo bias.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % bound;
  }

  // FNV-1a; used to turn hierarchical names into sub-stream ids.
  static constexpr std::uint64_t hash(std::string_view text) noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : text) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return h;
  }

 private:
  Rng(std::uint64_t seed, std::uint64_t stream)
      : seed_(mix(seed, stream)), engine_(make_engine(seed, stream)) {}

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) noexcept {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace tensorforge
