#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mega/fp16.hpp"
#include "oracle_helpers.hpp"

using namespace mega;

TEST(Fp16, KnownCodes) {
  EXPECT_EQ(to_fp16(1.0), 0x3C00);
  EXPECT_EQ(to_fp16(0.0), 0x0000);
  EXPECT_EQ(to_fp16(-0.0), 0x8000);
  EXPECT_EQ(to_fp16(-2.0), 0xC000);
  EXPECT_EQ(to_fp16(0.5), 0x3800);
  EXPECT_EQ(to_fp16(65504.0), 0x7BFF);
  EXPECT_EQ(to_fp16(5.9604644775390625e-08), 0x0001);  // smallest subnormal
}

TEST(Fp16, SaturatesInsteadOfOverflowing) {
  int count = 0;
  EXPECT_EQ(to_fp16(70000.0, &count), 0x7BFF);
  EXPECT_EQ(to_fp16(-1e10, &count), 0xFBFF);
  EXPECT_EQ(count, 2);
  // 65519.x still rounds down to max finite without counting as saturation.
  count = 0;
  EXPECT_EQ(to_fp16(65519.0, &count), 0x7BFF);
  EXPECT_EQ(count, 0);
  // The exact midpoint ties to even (65536), which overflows, so it saturates.
  EXPECT_EQ(to_fp16(65520.0, &count), 0x7BFF);
  EXPECT_EQ(count, 1);
}

TEST(Fp16, RejectsNan) {
  EXPECT_THROW(to_fp16(std::numeric_limits<double>::quiet_NaN()), InvalidParameter);
}

// Every finite half code decodes and re-encodes to itself.
TEST(Fp16, ExhaustiveRoundTrip) {
  for (uint32_t code = 0; code < 0x10000; ++code) {
    const auto c = static_cast<uint16_t>(code);
    const int e = (c >> 10) & 0x1F;
    if (e == 31) continue;  // inf/NaN are never produced by the encoder
    EXPECT_EQ(to_fp16(from_fp16(c)), c) << "code " << code;
  }
}

// Midpoints between adjacent finite halves must round to the even mantissa.
TEST(Fp16, RoundToNearestEvenAtMidpoints) {
  for (uint32_t code = 0; code + 1 < 0x7C00; ++code) {
    const double lo = from_fp16(static_cast<uint16_t>(code));
    const double hi = from_fp16(static_cast<uint16_t>(code + 1));
    const double mid = 0.5 * (lo + hi);  // exactly representable in double
    const uint16_t expect = (code % 2 == 0) ? static_cast<uint16_t>(code)
                                            : static_cast<uint16_t>(code + 1);
    EXPECT_EQ(to_fp16(mid), expect) << "between codes " << code << " and " << code + 1;
  }
}

// Random doubles map to the nearest representable half.
TEST(Fp16, NearestValueProperty) {
  oracle::Rng rng(101);
  for (int i = 0; i < 20000; ++i) {
    const double v = rng.normal(0.0, std::exp(rng.uniform(-12.0, 10.0)));
    const uint16_t c = to_fp16(v);
    const double r = from_fp16(c);
    const uint16_t sign = c & 0x8000;
    const int mag = c & 0x7FFF;
    for (int n : {mag - 1, mag + 1}) {
      if (n < 0 || n >= 0x7C00) continue;
      const double other = from_fp16(sign | static_cast<uint16_t>(n));
      EXPECT_LE(std::abs(v - r), std::abs(v - other)) << "v=" << v;
    }
  }
}
