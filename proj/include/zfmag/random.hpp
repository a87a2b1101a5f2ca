#pragma once

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Every draw is
// a pure function of (key, counter), so noise for (seed, frame, pixel) does
// not depend on evaluation order or thread count.

#include <array>
#include <cstdint>
#include <limits>

namespace zfmag {

using PhiloxBlock = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

inline PhiloxBlock philox4x32_10(PhiloxBlock ctr, PhiloxKey key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

/// Stream identifiers keep independent uses of one root seed apart.
enum class RngDomain : std::uint32_t { Photon = 1, ReadNoise = 2, Texture = 3, Test = 0xFFFF };

/// UniformRandomBitGenerator over the Philox stream addressed by
/// (seed; domain, stream, item). Usable with the <random> distributions.
class CounterRng {
 public:
  using result_type = std::uint32_t;

  CounterRng(std::uint64_t seed, RngDomain domain, std::uint32_t stream, std::uint32_t item)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        ctr_{0u, item, stream, static_cast<std::uint32_t>(domain)} {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (used_ == 4) {
      block_ = philox4x32_10(ctr_, key_);
      ++ctr_[0];
      used_ = 0;
    }
    return block_[used_++];
  }

 private:
  PhiloxKey key_;
  PhiloxBlock ctr_;
  PhiloxBlock block_{};
  int used_ = 4;
};

}  // namespace zfmag
