#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "mosaic/image.hpp"

namespace mosaic {

/// Catmull-Rom cubic convolution weight (a = -0.5).
double catmull_rom(double x);

/// Four taps and weights for each output sample along one axis, using
/// half-pixel-center alignment and clamp-to-edge boundaries.
struct CubicTaps {
  std::vector<std::array<int, 4>> index;
  std::vector<std::array<double, 4>> weight;
};
CubicTaps cubic_taps(int in_size, int out_size);

/// Separable bicubic resize of a dense grid.
template <typename Scalar>
Grid<Scalar> resize_bicubic(const Grid<Scalar>& src, int rows, int cols) {
  const int in_rows = static_cast<int>(src.rows());
  const int in_cols = static_cast<int>(src.cols());
  const CubicTaps tx = cubic_taps(in_cols, cols);
  const CubicTaps ty = cubic_taps(in_rows, rows);

  Grid<Scalar> horizontal(in_rows, cols);
  for (int y = 0; y < in_rows; ++y)
    for (int x = 0; x < cols; ++x) {
      Scalar acc(0);
      for (int k = 0; k < 4; ++k) acc += static_cast<Scalar>(tx.weight[x][k]) * src(y, tx.index[x][k]);
      horizontal(y, x) = acc;
    }

  Grid<Scalar> out(rows, cols);
  for (int y = 0; y < rows; ++y) {
    const auto& idx = ty.index[y];
    const auto& w = ty.weight[y];
    out.row(y) = static_cast<Scalar>(w[0]) * horizontal.row(idx[0]) + static_cast<Scalar>(w[1]) * horizontal.row(idx[1]) +
                 static_cast<Scalar>(w[2]) * horizontal.row(idx[2]) + static_cast<Scalar>(w[3]) * horizontal.row(idx[3]);
  }
  return out;
}

}  // namespace mosaic
