#include "mosaic/resize.hpp"

namespace mosaic {

double catmull_rom(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

CubicTaps cubic_taps(int in_size, int out_size) {
  CubicTaps taps;
  taps.index.resize(static_cast<std::size_t>(out_size));
  taps.weight.resize(static_cast<std::size_t>(out_size));
  const double scale = static_cast<double>(in_size) / out_size;
  for (int i = 0; i < out_size; ++i) {
    const double center = (i + 0.5) * scale - 0.5;
    const double base = std::floor(center);
    const double frac = center - base;
    for (int k = 0; k < 4; ++k) {
      const int src = static_cast<int>(base) - 1 + k;
      taps.index[i][k] = std::clamp(src, 0, in_size - 1);
      taps.weight[i][k] = catmull_rom(frac - (k - 1));
    }
  }
  return taps;
}

}  // namespace mosaic
