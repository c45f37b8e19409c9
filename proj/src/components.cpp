#include <numeric>

#include "mosaic/maskgen.hpp"

namespace mosaic {

namespace {

struct DisjointSet {
  std::vector<int> parent;

  int make() {
    parent.push_back(static_cast<int>(parent.size()));
    return static_cast<int>(parent.size()) - 1;
  }
  int find(int v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b)
      parent[b] = a;
    else
      parent[a] = b;
  }
};

}  // namespace

Components components(const MaskGrid& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8)
    throw MaskError(MaskErrc::InvalidParams, "connectivity must be 4 or 8");
  const int rows = static_cast<int>(mask.rows());
  const int cols = static_cast<int>(mask.cols());
  Grid<int> provisional = Grid<int>::Constant(rows, cols, -1);
  DisjointSet sets;

  // Previously visited neighbours in raster order.
  static constexpr int kOffsets8[4][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}};
  static constexpr int kOffsets4[2][2] = {{-1, 0}, {0, -1}};
  const int (*offsets)[2] = connectivity == 8 ? kOffsets8 : kOffsets4;
  const int offset_count = connectivity == 8 ? 4 : 2;

  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      if (!mask(y, x)) continue;
      int label = -1;
      for (int k = 0; k < offset_count; ++k) {
        const int ny = y + offsets[k][0];
        const int nx = x + offsets[k][1];
        if (ny < 0 || nx < 0 || nx >= cols) continue;
        const int other = provisional(ny, nx);
        if (other < 0) continue;
        if (label < 0)
          label = other;
        else
          sets.unite(label, other);
      }
      provisional(y, x) = label < 0 ? sets.make() : label;
    }
  }

  Components out;
  out.labels = Grid<int>::Zero(rows, cols);
  std::vector<int> final_label(sets.parent.size(), 0);
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      const int p = provisional(y, x);
      if (p < 0) continue;
      const int root = sets.find(p);
      if (final_label[root] == 0) {
        out.areas.push_back(0);
        final_label[root] = static_cast<int>(out.areas.size());
      }
      const int label = final_label[root];
      out.labels(y, x) = label;
      ++out.areas[label - 1];
    }
  }
  return out;
}

}  // namespace mosaic
