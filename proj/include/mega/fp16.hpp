#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

#include "mega/errors.hpp"

namespace mega {

/// IEEE 754 binary16 encode, round-to-nearest-even. Values that would round
/// past the largest finite half (65504) saturate to ±65504 instead of
/// overflowing to infinity; each saturation bumps *saturation_count.
/// NaN input is rejected.
inline uint16_t to_fp16(double v, int* saturation_count = nullptr) {
  if (std::isnan(v)) throw InvalidParameter("to_fp16: NaN input");
  const uint16_t sign = std::signbit(v) ? 0x8000 : 0x0000;
  const double a = std::abs(v);
  if (a == 0.0) return sign;
  // 65520 is the midpoint between 65504 and the first overflow value; RTNE
  // sends it (and everything above) past the finite range.
  if (a >= 65520.0) {
    if (saturation_count) ++(*saturation_count);
    return sign | 0x7BFF;
  }
  int e = std::ilogb(a);
  if (e < -14) e = -14;
  // Scale so the half-precision mantissa sits in the integer part, then let
  // nearbyint apply round-to-nearest-even.
  const double m = std::ldexp(a, 10 - e);
  const auto q = static_cast<uint32_t>(std::nearbyint(m));
  return static_cast<uint16_t>(sign | (((e + 15) << 10) + q - 1024));
}

/// Exact binary16 decode.
inline double from_fp16(uint16_t code) {
  const double sign = (code & 0x8000) ? -1.0 : 1.0;
  const int e = (code >> 10) & 0x1F;
  const int m = code & 0x3FF;
  if (e == 31) {
    if (m != 0) return std::numeric_limits<double>::quiet_NaN();
    return sign * std::numeric_limits<double>::infinity();
  }
  if (e == 0) return sign * std::ldexp(static_cast<double>(m), -24);
  return sign * std::ldexp(static_cast<double>(1024 + m), e - 25);
}

/// Nearest representable binary16 value (round-trip through the codec).
inline double round_fp16(double v, int* saturation_count = nullptr) {
  return from_fp16(to_fp16(v, saturation_count));
}

}  // namespace mega
