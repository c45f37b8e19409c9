#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "mosaic/maskgen.hpp"

namespace mosaic {

namespace {

constexpr int kGridDims = 5;
constexpr int kBitsSpatial = 16;
constexpr int kBitsColor = 10;
constexpr double kBlurCenter = 2.0 * kGridDims;
constexpr int kBistochasticIterations = 10;

using Vec = Eigen::VectorXd;

// 1D squared distance transform (lower envelope of parabolas).
void distance_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

struct PixelSplat {
  std::array<int, 4> vertex{};
  std::array<double, 4> weight{};
  int taps = 0;
};

// Bilateral grid over (x, y, Y, U, V): bilinear in space, nearest in color.
class BilateralGrid {
 public:
  BilateralGrid(const RgbImage& image, const BilateralParams& params) {
    const int rows = image.height;
    const int cols = image.width;
    splats_.resize(static_cast<std::size_t>(rows) * cols);
    std::unordered_map<std::uint64_t, int> index;
    std::vector<std::array<int, kGridDims>> coords;

    for (int y = 0; y < rows; ++y) {
      for (int x = 0; x < cols; ++x) {
        const auto* px = image.at(x, y);
        const double r = px[0];
        const double g = px[1];
        const double b = px[2];
        const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
        const double cu = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
        const double cv = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
        const int gl = static_cast<int>(std::lround(luma / params.luma_sigma));
        const int gu = static_cast<int>(std::lround(cu / params.chroma_sigma));
        const int gv = static_cast<int>(std::lround(cv / params.chroma_sigma));

        const double fx = x / params.spatial_sigma;
        const double fy = y / params.spatial_sigma;
        const int x0 = static_cast<int>(std::floor(fx));
        const int y0 = static_cast<int>(std::floor(fy));
        const double wx = fx - x0;
        const double wy = fy - y0;

        auto& splat = splats_[static_cast<std::size_t>(y) * cols + x];
        for (int corner = 0; corner < 4; ++corner) {
          const int dx = corner & 1;
          const int dy = corner >> 1;
          const double w = (dx ? wx : 1.0 - wx) * (dy ? wy : 1.0 - wy);
          if (w <= 0.0) continue;
          const std::array<int, kGridDims> c = {x0 + dx, y0 + dy, gl, gu, gv};
          const auto key = pack(c);
          auto [it, inserted] = index.try_emplace(key, static_cast<int>(coords.size()));
          if (inserted) coords.push_back(c);
          splat.vertex[splat.taps] = it->second;
          splat.weight[splat.taps] = w;
          ++splat.taps;
        }
      }
    }

    neighbours_.resize(coords.size());
    for (std::size_t v = 0; v < coords.size(); ++v) {
      for (int dim = 0; dim < kGridDims; ++dim) {
        for (int side = 0; side < 2; ++side) {
          auto c = coords[v];
          c[dim] += side ? 1 : -1;
          int found = -1;
          if (c[dim] >= 0) {
            const auto it = index.find(pack(c));
            if (it != index.end()) found = it->second;
          }
          neighbours_[v][2 * dim + side] = found;
        }
      }
    }
  }

  int vertex_count() const { return static_cast<int>(neighbours_.size()); }

  /// z -> S^T B S z
  Vec affinity(const Vec& z) const {
    Vec grid = Vec::Zero(vertex_count());
    for (std::size_t i = 0; i < splats_.size(); ++i) {
      const auto& s = splats_[i];
      for (int k = 0; k < s.taps; ++k) grid[s.vertex[k]] += s.weight[k] * z[static_cast<Eigen::Index>(i)];
    }
    Vec blurred = kBlurCenter * grid;
    for (int v = 0; v < vertex_count(); ++v)
      for (int n : neighbours_[static_cast<std::size_t>(v)])
        if (n >= 0) blurred[v] += grid[n];
    Vec out(static_cast<Eigen::Index>(splats_.size()));
    for (std::size_t i = 0; i < splats_.size(); ++i) {
      const auto& s = splats_[i];
      double acc = 0.0;
      for (int k = 0; k < s.taps; ++k) acc += s.weight[k] * blurred[s.vertex[k]];
      out[static_cast<Eigen::Index>(i)] = acc;
    }
    return out;
  }

  /// Diagonal of S^T B S.
  Vec self_affinity() const {
    Vec out(static_cast<Eigen::Index>(splats_.size()));
    for (std::size_t i = 0; i < splats_.size(); ++i) {
      const auto& s = splats_[i];
      double acc = 0.0;
      for (int a = 0; a < s.taps; ++a)
        for (int b = 0; b < s.taps; ++b) {
          double blur = 0.0;
          if (s.vertex[a] == s.vertex[b]) {
            blur = kBlurCenter;
          } else {
            for (int n : neighbours_[static_cast<std::size_t>(s.vertex[a])])
              if (n == s.vertex[b]) blur = 1.0;
          }
          acc += s.weight[a] * s.weight[b] * blur;
        }
      out[static_cast<Eigen::Index>(i)] = acc;
    }
    return out;
  }

 private:
  static std::uint64_t pack(const std::array<int, kGridDims>& c) {
    std::uint64_t key = 0;
    key |= static_cast<std::uint64_t>(c[0]) & ((1ULL << kBitsSpatial) - 1);
    key |= (static_cast<std::uint64_t>(c[1]) & ((1ULL << kBitsSpatial) - 1)) << kBitsSpatial;
    key |= (static_cast<std::uint64_t>(c[2]) & ((1ULL << kBitsColor) - 1)) << (2 * kBitsSpatial);
    key |= (static_cast<std::uint64_t>(c[3]) & ((1ULL << kBitsColor) - 1)) << (2 * kBitsSpatial + kBitsColor);
    key |= (static_cast<std::uint64_t>(c[4]) & ((1ULL << kBitsColor) - 1)) << (2 * kBitsSpatial + 2 * kBitsColor);
    return key;
  }

  std::vector<PixelSplat> splats_;
  std::vector<std::array<int, 2 * kGridDims>> neighbours_;
};

}  // namespace

void BilateralParams::validate() const {
  if (!(spatial_sigma >= 1.0)) throw MaskError(MaskErrc::InvalidParams, "bilateral.spatial_sigma must be >= 1");
  if (!(luma_sigma >= 0.5)) throw MaskError(MaskErrc::InvalidParams, "bilateral.luma_sigma must be >= 0.5");
  if (!(chroma_sigma >= 0.5)) throw MaskError(MaskErrc::InvalidParams, "bilateral.chroma_sigma must be >= 0.5");
  if (!(lambda > 0.0)) throw MaskError(MaskErrc::InvalidParams, "bilateral.lambda must be positive");
  if (iterations < 1) throw MaskError(MaskErrc::InvalidParams, "bilateral.iterations must be >= 1");
  if (!(confidence_floor > 0.0 && confidence_floor <= 1.0))
    throw MaskError(MaskErrc::InvalidParams, "bilateral.confidence_floor must lie in (0, 1]");
}

MapGrid boundary_distance(const MaskGrid& mask) {
  const int rows = static_cast<int>(mask.rows());
  const int cols = static_cast<int>(mask.cols());
  constexpr double kFar = 1e20;
  MapGrid f = MapGrid::Constant(rows, cols, kFar);
  bool any = false;
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      const auto label = mask(y, x);
      const bool edge = (x > 0 && mask(y, x - 1) != label) || (x + 1 < cols && mask(y, x + 1) != label) ||
                        (y > 0 && mask(y - 1, x) != label) || (y + 1 < rows && mask(y + 1, x) != label);
      if (edge) {
        f(y, x) = 0.0;
        any = true;
      }
    }
  if (!any) return MapGrid::Constant(rows, cols, std::numeric_limits<double>::infinity());

  std::vector<int> v;
  std::vector<double> z;
  std::vector<double> in(static_cast<std::size_t>(std::max(rows, cols)));
  std::vector<double> out(in.size());
  for (int x = 0; x < cols; ++x) {
    for (int y = 0; y < rows; ++y) in[y] = f(y, x);
    distance_1d(in.data(), out.data(), rows, v, z);
    for (int y = 0; y < rows; ++y) f(y, x) = out[y];
  }
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) in[x] = f(y, x);
    distance_1d(in.data(), out.data(), cols, v, z);
    for (int x = 0; x < cols; ++x) f(y, x) = out[x];
  }
  return f.sqrt();
}

RegionMask refine(const RegionMask& coarse, const RgbImage& reference, const BilateralParams& params,
                  RefineReport* report) {
  params.validate();
  const int rows = static_cast<int>(coarse.mask.rows());
  const int cols = static_cast<int>(coarse.mask.cols());
  if (reference.width != cols || reference.height != rows)
    throw MaskError(MaskErrc::ShapeMismatch, "reference image does not match the coarse mask");

  RegionMask refined;
  refined.threshold_used = coarse.threshold_used;
  refined.stage = MaskStage::Refined;
  refined.mask = coarse.mask;

  const Eigen::Index n = static_cast<Eigen::Index>(rows) * cols;
  const MapGrid distance = boundary_distance(coarse.mask);
  // pixels farther than one spatial sigma from the coarse boundary stay fixed
  const double band = params.spatial_sigma;

  Vec target(n);
  Vec confidence(n);
  Vec free_mask(n);
  int free_count = 0;
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      const auto i = static_cast<Eigen::Index>(y) * cols + x;
      const double d = distance(y, x);
      target[i] = coarse.mask(y, x) ? 1.0 : 0.0;
      confidence[i] = params.confidence_floor + (1.0 - params.confidence_floor) * std::min(1.0, d / band);
      free_mask[i] = d < band ? 1.0 : 0.0;
      free_count += d < band;
    }
  if (report) *report = RefineReport{free_count, 0, 0.0, 0.0};
  if (free_count == 0) return refined;

  const BilateralGrid grid(reference, params);
  if (report) report->grid_vertices = grid.vertex_count();

  // Bistochastic scaling: n_i * (W n)_i = 1, so W~ = N W N has unit row sums.
  Vec scale = Vec::Ones(n);
  for (int it = 0; it < kBistochasticIterations; ++it) scale = (scale.array() / grid.affinity(scale).array()).sqrt();
  auto normalized_affinity = [&](const Vec& z) -> Vec {
    return scale.cwiseProduct(grid.affinity(scale.cwiseProduct(z)));
  };

  const double lambda = params.lambda;
  // A restricted to free pixels: lambda * (I - W~) + diag(c).
  auto apply = [&](const Vec& z) -> Vec {
    Vec out = lambda * (z - normalized_affinity(z)) + confidence.cwiseProduct(z);
    return out.cwiseProduct(free_mask);
  };

  const Vec fixed_target = target.cwiseProduct(Vec::Ones(n) - free_mask);
  const Vec rhs = (confidence.cwiseProduct(target) + lambda * normalized_affinity(fixed_target)).cwiseProduct(free_mask);
  const Vec diag_w = scale.cwiseAbs2().cwiseProduct(grid.self_affinity());
  Vec inv_diag = (lambda * (Vec::Ones(n) - diag_w) + confidence).cwiseInverse().cwiseProduct(free_mask);

  // Preconditioned conjugate gradients warm-started at the coarse labels.
  Vec x = target.cwiseProduct(free_mask);
  Vec r = rhs - apply(x);
  const double initial = r.norm();
  Vec z = inv_diag.cwiseProduct(r);
  Vec p = z;
  double rz = r.dot(z);
  for (int it = 0; it < params.iterations && rz > 0.0; ++it) {
    const Vec ap = apply(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) break;
    const double alpha = rz / pap;
    x += alpha * p;
    r -= alpha * ap;
    z = inv_diag.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  const double final_residual = (rhs - apply(x)).norm();
  if (report) {
    report->initial_residual = initial;
    report->final_residual = final_residual;
  }
  if (!std::isfinite(final_residual) || !x.allFinite() || (initial > 0.0 && final_residual > initial))
    throw MaskError(MaskErrc::SolverDiverged, "bilateral solver residual did not decrease");

  for (int y = 0; y < rows; ++y)
    for (int xx = 0; xx < cols; ++xx) {
      const auto i = static_cast<Eigen::Index>(y) * cols + xx;
      if (free_mask[i] == 0.0) continue;
      refined.mask(y, xx) = std::clamp(x[i], 0.0, 1.0) > 0.5 ? 1 : 0;
    }
  return refined;
}

}  // namespace mosaic
