#pragma once

#include <cmath>
#include <cstdint>

namespace pegp {

// SplitMix64 finalizer (Steele, Lea, Flood 2014).
[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based generator: draw i of stream (seed, stream) is
//   splitmix64(key ^ splitmix64(i)),  key = splitmix64(seed ^ splitmix64(stream)).
// Every draw is a pure function of (seed, stream, i), so results do not depend on
// platform, call order across streams, or thread scheduling.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(splitmix64(seed ^ splitmix64(stream))) {}

  [[nodiscard]] std::uint64_t at(std::uint64_t i) const noexcept { return splitmix64(key_ ^ splitmix64(i)); }
  std::uint64_t next_u64() noexcept { return at(counter_++); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal by Box-Muller; one draw per call.
  double normal() noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace pegp
