#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "hints/rng.hpp"

using namespace hints;

TEST(Rng, UniformUsesTop53BitsOfTheEngine) {
  Rng rng(42);
  std::mt19937_64 ref(42);
  for (int i = 0; i < 100; ++i) {
    const double expected = static_cast<double>(ref() >> 11) / 9007199254740992.0;
    EXPECT_EQ(rng.uniform(), expected);
  }
}

TEST(Rng, EngineMatchesStandardReferenceValue) {
  // The C++ standard fixes the 10000th output of a default-seeded mt19937_64.
  Rng rng(5489);
  std::uint64_t bits = 0;
  for (int i = 0; i < 10000; ++i) bits = static_cast<std::uint64_t>(rng.uniform() * 9007199254740992.0);
  EXPECT_EQ(bits, 9981545732273789042ULL >> 11);
}

TEST(Rng, NormalMoments) {
  Rng rng(7);
  const int n = 200000;
  double s1 = 0, s2 = 0, s4 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s1 += z;
    s2 += z * z;
    s4 += z * z * z * z;
  }
  EXPECT_NEAR(s1 / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
  EXPECT_NEAR(s4 / n, 3.0, 0.05);
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
  Rng rng(3);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto k = rng.below(7);
    ASSERT_LT(k, 7u);
    ++hist[k];
  }
  for (int h : hist) EXPECT_NEAR(h, 10000, 500);
}

TEST(Rng, ShuffleIsAPermutationAndSeedDeterministic) {
  std::vector<int> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), 0);
  Rng r1(11), r2(11);
  r1.shuffle(std::span<int>(a));
  r2.shuffle(std::span<int>(b));
  EXPECT_EQ(a, b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_FALSE(std::is_sorted(a.begin(), a.end()));
}

TEST(Rng, DeriveSeedIsSplitMixBased) {
  // First splitmix64 output for state 0 is 0xe220a8397b1dcdaf.
  const auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  ASSERT_EQ(mix(0), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(derive_seed(0, 0, 0), mix(mix(mix(0))));
}

TEST(Rng, DerivedSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 4; ++s) {
    for (std::uint64_t stream = 0; stream < 4; ++stream) {
      for (std::uint64_t i = 0; i < 64; ++i) seen.insert(derive_seed(s, stream, i));
    }
  }
  EXPECT_EQ(seen.size(), 4u * 4u * 64u);
}
