#include <gtest/gtest.h>

#include <random>
#include <set>

#include "zfmag/random.hpp"

using namespace zfmag;

// Known-answer vectors published with the reference Random123 implementation.
TEST(Philox, KnownAnswerVectors) {
  EXPECT_EQ(philox4x32_10({0, 0, 0, 0}, {0, 0}), (PhiloxBlock{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  EXPECT_EQ(philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
            (PhiloxBlock{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  EXPECT_EQ(philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
            (PhiloxBlock{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(CounterRng, SameAddressSameStream) {
  CounterRng a(42, RngDomain::Photon, 7, 12345), b(42, RngDomain::Photon, 7, 12345);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(CounterRng, AddressComponentsGiveDistinctStreams) {
  auto first8 = [](CounterRng r) {
    std::vector<std::uint32_t> v;
    for (int i = 0; i < 8; ++i) v.push_back(r());
    return v;
  };
  std::set<std::vector<std::uint32_t>> seen;
  seen.insert(first8({1, RngDomain::Photon, 0, 0}));
  seen.insert(first8({2, RngDomain::Photon, 0, 0}));
  seen.insert(first8({1ull << 32, RngDomain::Photon, 0, 0}));
  seen.insert(first8({1, RngDomain::ReadNoise, 0, 0}));
  seen.insert(first8({1, RngDomain::Photon, 1, 0}));
  seen.insert(first8({1, RngDomain::Photon, 0, 1}));
  // swapping stream and item must not alias
  seen.insert(first8({1, RngDomain::Photon, 5, 9}));
  seen.insert(first8({1, RngDomain::Photon, 9, 5}));
  EXPECT_EQ(seen.size(), 8u);
}

TEST(CounterRng, UniformBitsPassChiSquare) {
  CounterRng r(2024, RngDomain::Test, 0, 0);
  constexpr int kBins = 64, kDraws = 640000;
  std::vector<int> hist(kBins, 0);
  for (int i = 0; i < kDraws; ++i) ++hist[r() >> 26];
  const double expect = static_cast<double>(kDraws) / kBins;
  double chi2 = 0;
  for (int h : hist) chi2 += (h - expect) * (h - expect) / expect;
  // 63 degrees of freedom: the 99.9% quantile is about 103
  EXPECT_LT(chi2, 103.0);
}

TEST(CounterRng, WorksWithStandardDistributions) {
  CounterRng r(7, RngDomain::Test, 3, 4);
  std::normal_distribution<double> normal(0.0, 1.0);
  double s = 0, s2 = 0;
  constexpr int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = normal(r);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(var, 1.0, 4.0 * std::sqrt(2.0 / n));
}
