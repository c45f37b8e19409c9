#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mosaic/error.hpp"

namespace mosaic {

/// Row-major dense grid; rows index y, columns index x.
template <typename Scalar>
using Grid = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MapGrid = Grid<double>;
using MaskGrid = Grid<std::uint8_t>;

/// 8-bit interleaved RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // size width*height*3

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  RgbImage crop(int x0, int y0, int w, int h) const;

  bool operator==(const RgbImage&) const = default;
};

enum class ImageErrc { OpenFailed, DecodeFailed, EncodeFailed };
using ImageError = Error<ImageErrc>;

void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png_gray(const std::filesystem::path& path, const MaskGrid& mask);
RgbImage read_png(const std::filesystem::path& path);

/// Encodes to an in-memory PNG byte string (deterministic for a given zlib).
std::vector<std::uint8_t> encode_png(const RgbImage& image);

}  // namespace mosaic
