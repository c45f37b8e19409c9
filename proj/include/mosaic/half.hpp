#pragma once

#include <cstdint>

namespace mosaic {

// IEEE-754 binary16 conversion, round-to-nearest-even.
std::uint16_t float_to_half(float value);
float half_to_float(std::uint16_t bits);

/// Rounds a float to the nearest binary16-representable value.
inline float quantize_half(float value) { return half_to_float(float_to_half(value)); }

}  // namespace mosaic
