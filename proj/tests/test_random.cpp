#include <gtest/gtest.h>

#include <set>

#include "geoadd/random.hpp"

using geoadd::Philox;

// Known-answer vectors for Philox4x32-10 from the Random123 distribution.
TEST(Philox, KnownAnswerZeros) {
  const auto out = Philox::bijection({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out, (Philox::Block{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
}

TEST(Philox, KnownAnswerOnes) {
  const auto out = Philox::bijection({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out, (Philox::Block{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(Philox, KnownAnswerPi) {
  const auto out = Philox::bijection({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(out, (Philox::Block{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Philox, FirstOutputsAreBijectionOfCounterZero) {
  Philox g(0, 0);
  const auto block = Philox::bijection({0, 0, 0, 0}, {0, 0});
  for (int i = 0; i < 4; ++i) EXPECT_EQ(g(), block[i]);
}

TEST(Philox, StreamsAreReproducibleAndDistinct) {
  Philox a(42, 7), b(42, 7), c(42, 8), d(43, 7);
  std::vector<std::uint32_t> va, vb, vc, vd;
  for (int i = 0; i < 64; ++i) va.push_back(a()), vb.push_back(b()), vc.push_back(c()), vd.push_back(d());
  EXPECT_EQ(va, vb);
  EXPECT_NE(va, vc);
  EXPECT_NE(va, vd);
}

TEST(Philox, UniformInUnitIntervalWithSaneMoments) {
  Philox g(2024, 3);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = g.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.005);
  EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12.0, 0.002);
}

TEST(Philox, CounterCarriesIntoSecondWord) {
  // Outputs never repeat over a long run crossing many blocks.
  Philox g(1, 1);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 20000; ++i) {
    const std::uint64_t v = (static_cast<std::uint64_t>(g()) << 32) | g();
    EXPECT_TRUE(seen.insert(v).second);
  }
}
