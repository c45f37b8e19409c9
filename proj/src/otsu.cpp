#include "mosaic/maskgen.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <array>
#include <cmath>

namespace mosaic {

namespace mp = boost::multiprecision;

int otsu_bin(double value) {
  const double scaled = std::ceil(value * kOtsuBins) - 1.0;
  return static_cast<int>(std::clamp(scaled, 0.0, static_cast<double>(kOtsuBins - 1)));
}

OtsuResult otsu(const AggregatedMap& map) {
  if (map.degenerate) throw MaskError(MaskErrc::DegenerateMap, "region " + std::to_string(map.region) + ": constant map");
  return otsu(map.values);
}

OtsuResult otsu(const MapGrid& values) {
  std::array<long long, kOtsuBins> hist{};
  for (Eigen::Index i = 0; i < values.size(); ++i) ++hist[static_cast<std::size_t>(otsu_bin(values.data()[i]))];

  long long total = 0;
  long long total_sum = 0;
  for (int b = 0; b < kOtsuBins; ++b) {
    total += hist[b];
    total_sum += static_cast<long long>(b) * hist[b];
  }

  // Between-class variance is (N*S0 - n0*S)^2 / (n0*n1*N^2); compare the
  // fractions (N*S0 - n0*S)^2 / (n0*n1) by cross-multiplication.
  int best = -1;
  mp::int256_t best_num = 0;
  mp::int256_t best_den = 1;
  long long n0 = 0;
  long long s0 = 0;
  for (int k = 0; k < kOtsuBins - 1; ++k) {
    n0 += hist[k];
    s0 += static_cast<long long>(k) * hist[k];
    const long long n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const mp::int256_t diff = mp::int256_t(total) * s0 - mp::int256_t(n0) * total_sum;
    const mp::int256_t num = diff * diff;
    const mp::int256_t den = mp::int256_t(n0) * n1;
    if (best < 0 || num * best_den > best_num * den) {
      best = k;
      best_num = num;
      best_den = den;
    }
  }
  if (best < 0 || best_num == 0) throw MaskError(MaskErrc::DegenerateMap, "map has a single populated histogram bin");

  OtsuResult result;
  result.bin = best;
  result.threshold = static_cast<double>(best + 1) / kOtsuBins;
  result.coarse.threshold_used = result.threshold;
  result.coarse.stage = MaskStage::Coarse;
  result.coarse.mask = (values > result.threshold).cast<std::uint8_t>();
  return result;
}

}  // namespace mosaic
