#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace rmnerf {

inline constexpr std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based random stream: every draw is a pure function of
// (seed, stream, counter), so results do not depend on evaluation order or
// thread count. A stream is typically an edge, sample, or camera index.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(SplitMix64(SplitMix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL))) {}

  std::uint64_t Bits(std::uint64_t counter) const {
    return SplitMix64(key_ ^ SplitMix64(counter + 0x632be59bd9b4e019ULL));
  }
  // Uniform in [0, 1) with 53 random bits.
  double Uniform(std::uint64_t counter) const {
    return static_cast<double>(Bits(counter) >> 11) * 0x1.0p-53;
  }
  // Uniform in (0, 1].
  double UniformPositive(std::uint64_t counter) const {
    return 1.0 - Uniform(counter);
  }
  // Standard normal via Box-Muller; consumes counters 2k and 2k + 1.
  double Normal(std::uint64_t k) const {
    const double u1 = UniformPositive(2 * k);
    const double u2 = Uniform(2 * k + 1);
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }
  std::uint64_t Below(std::uint64_t counter, std::uint64_t n) const {
    return static_cast<std::uint64_t>(Uniform(counter) * static_cast<double>(n));
  }

 private:
  std::uint64_t key_;
};

}  // namespace rmnerf
