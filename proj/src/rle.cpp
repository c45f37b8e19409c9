#include "mosaic/dataset.hpp"

namespace mosaic {

Rle encode_rle(const MaskGrid& mask) {
  Rle rle;
  rle.height = static_cast<int>(mask.rows());
  rle.width = static_cast<int>(mask.cols());
  std::uint8_t current = 0;
  long long run = 0;
  for (int x = 0; x < rle.width; ++x)
    for (int y = 0; y < rle.height; ++y) {
      const std::uint8_t v = mask(y, x) ? 1 : 0;
      if (v != current) {
        rle.counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  rle.counts.push_back(run);
  return rle;
}

MaskGrid decode_rle(const Rle& rle) {
  if (rle.height <= 0 || rle.width <= 0)
    throw DatasetError(DatasetErrc::ValidationError, "RLE size must be positive");
  const long long total = static_cast<long long>(rle.height) * rle.width;
  MaskGrid mask = MaskGrid::Zero(rle.height, rle.width);
  long long pos = 0;
  std::uint8_t value = 0;
  for (long long run : rle.counts) {
    if (run < 0 || run > total - pos)
      throw DatasetError(DatasetErrc::RleOverrun, "RLE counts exceed the " + std::to_string(rle.height) + "x" +
                                                      std::to_string(rle.width) + " grid");
    if (value)
      for (long long k = pos; k < pos + run; ++k)
        mask(static_cast<Eigen::Index>(k % rle.height), static_cast<Eigen::Index>(k / rle.height)) = 1;
    pos += run;
    value ^= 1;
  }
  if (pos != total)
    throw DatasetError(DatasetErrc::RleIncomplete, "RLE covers " + std::to_string(pos) + " of " +
                                                       std::to_string(total) + " pixels");
  return mask;
}

}  // namespace mosaic
