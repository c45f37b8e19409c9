#pragma once

// Independent reference implementations and fixtures shared by the unit
// tests and the acceptance binary. Nothing here calls into the code it is
// used to check.

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "mosaic/backend.hpp"
#include "mosaic/geometry.hpp"
#include "mosaic/prompt.hpp"
#include "mosaic/image.hpp"
#include "mosaic/rng.hpp"
#include "mosaic/synthetic.hpp"

namespace testkit {

using mosaic::MapGrid;
using mosaic::MaskGrid;
using mosaic::SplitMix64;

// ---- random inputs ----------------------------------------------------------

inline MapGrid random_map(SplitMix64& rng, int rows, int cols) {
  MapGrid m(rows, cols);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) m(y, x) = rng.uniform();
  // Pin the extremes so the map is already min-max normalized.
  m(static_cast<int>(rng.uniform_int(0, rows - 1)), static_cast<int>(rng.uniform_int(0, cols - 1))) = 0.0;
  m(static_cast<int>(rng.uniform_int(0, rows - 1)), static_cast<int>(rng.uniform_int(0, cols - 1))) = 1.0;
  return m;
}

inline MaskGrid random_mask(SplitMix64& rng, int rows, int cols, double density) {
  MaskGrid m(rows, cols);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) m(y, x) = rng.uniform() < density ? 1 : 0;
  return m;
}

/// Random valid canvas; retries until validation passes.
inline mosaic::CanvasSpec random_spec(SplitMix64& rng) {
  static constexpr int kFactors[3] = {4, 8, 16};
  for (;;) {
    mosaic::CanvasSpec s;
    s.latent_factor = kFactors[rng.uniform_int(0, 2)];
    s.width = s.latent_factor * static_cast<int>(rng.uniform_int(8, 24));
    s.height = s.latent_factor * static_cast<int>(rng.uniform_int(8, 24));
    static constexpr int kCounts[3] = {1, 2, 4};
    s.object_count = kCounts[rng.uniform_int(0, 2)];
    s.jitter_ratio = rng.uniform(0.05, 0.5);
    s.overlap_x = 2 * s.latent_factor * static_cast<int>(rng.uniform_int(0, 4));
    s.overlap_y = 2 * s.latent_factor * static_cast<int>(rng.uniform_int(0, 4));
    try {
      s.validate();
      return s;
    } catch (const mosaic::GeometryError&) {
    }
  }
}

// ---- connected components: recursive flood fill ----------------------------

inline void flood(const MaskGrid& m, mosaic::Grid<int>& labels, int y, int x, int label, int connectivity) {
  if (y < 0 || x < 0 || y >= m.rows() || x >= m.cols()) return;
  if (!m(y, x) || labels(y, x)) return;
  labels(y, x) = label;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      if (dx == 0 && dy == 0) continue;
      if (connectivity == 4 && dx != 0 && dy != 0) continue;
      flood(m, labels, y + dy, x + dx, label, connectivity);
    }
}

inline mosaic::Grid<int> flood_fill_labels(const MaskGrid& m, int connectivity, int* count = nullptr) {
  mosaic::Grid<int> labels = mosaic::Grid<int>::Zero(m.rows(), m.cols());
  int next = 0;
  for (int y = 0; y < m.rows(); ++y)
    for (int x = 0; x < m.cols(); ++x)
      if (m(y, x) && !labels(y, x)) flood(m, labels, y, x, ++next, connectivity);
  if (count) *count = next;
  return labels;
}

/// Same partition up to a relabeling (bijection between label sets).
inline bool same_partition(const mosaic::Grid<int>& a, const mosaic::Grid<int>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  std::map<int, int> ab, ba;
  for (int y = 0; y < a.rows(); ++y)
    for (int x = 0; x < a.cols(); ++x) {
      const int la = a(y, x), lb = b(y, x);
      if ((la == 0) != (lb == 0)) return false;
      if (la == 0) continue;
      auto [ia, fresh_a] = ab.emplace(la, lb);
      auto [ib, fresh_b] = ba.emplace(lb, la);
      if (ia->second != lb || ib->second != la) return false;
    }
  return true;
}

// ---- Otsu: exhaustive search with exact rationals --------------------------

struct OtsuOracle {
  int last_background_bin = -1;  // pixels in bins <= this are background
  MaskGrid mask;
};

/// Enumerates every boundary between 256 equal bins over [0, 1], computes
/// the between-class variance from the pixel values binned independently
/// here, and keeps the first maximum.
inline OtsuOracle otsu_exhaustive(const MapGrid& map) {
  using boost::multiprecision::cpp_rational;
  const int n = static_cast<int>(map.size());
  std::vector<int> bins(n);
  for (int i = 0; i < n; ++i) {
    const double v = map.data()[i];
    // Bin k covers (k/256, (k+1)/256]; bin 0 also takes 0.
    int k = 0;
    while (k < 255 && v > (k + 1) / 256.0) ++k;
    bins[i] = k;
  }
  OtsuOracle best;
  std::optional<cpp_rational> best_score;
  for (int t = 0; t < 255; ++t) {
    long long n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (int i = 0; i < n; ++i) {
      if (bins[i] <= t) {
        ++n0;
        s0 += bins[i];
      } else {
        ++n1;
        s1 += bins[i];
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    const cpp_rational total(n0 + n1);
    const cpp_rational mu0(s0, n0), mu1(s1, n1);
    const cpp_rational score = cpp_rational(n0) / total * (cpp_rational(n1) / total) * (mu0 - mu1) * (mu0 - mu1);
    if (!best_score || score > *best_score) {
      best_score = score;
      best.last_background_bin = t;
    }
  }
  best.mask = MaskGrid(map.rows(), map.cols());
  for (int i = 0; i < n; ++i) best.mask.data()[i] = bins[i] > best.last_background_bin ? 1 : 0;
  return best;
}

// ---- bicubic: direct 16-tap evaluation --------------------------------------

inline double keys_kernel(double x) {
  const double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

inline MapGrid bicubic_direct(const MapGrid& src, int rows, int cols) {
  MapGrid out(rows, cols);
  const double sy = static_cast<double>(src.rows()) / rows;
  const double sx = static_cast<double>(src.cols()) / cols;
  for (int oy = 0; oy < rows; ++oy)
    for (int ox = 0; ox < cols; ++ox) {
      const double fy = (oy + 0.5) * sy - 0.5;
      const double fx = (ox + 0.5) * sx - 0.5;
      const int y0 = static_cast<int>(std::floor(fy));
      const int x0 = static_cast<int>(std::floor(fx));
      double acc = 0.0;
      for (int j = -1; j <= 2; ++j)
        for (int i = -1; i <= 2; ++i) {
          const int yy = std::clamp(y0 + j, 0, static_cast<int>(src.rows()) - 1);
          const int xx = std::clamp(x0 + i, 0, static_cast<int>(src.cols()) - 1);
          acc += keys_kernel(fy - (y0 + j)) * keys_kernel(fx - (x0 + i)) * src(yy, xx);
        }
      out(oy, ox) = acc;
    }
  return out;
}

// ---- masks and images ---------------------------------------------------------

inline double mask_iou(const MaskGrid& a, const MaskGrid& b) {
  long long inter = 0, uni = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    inter += (a.data()[i] && b.data()[i]);
    uni += (a.data()[i] || b.data()[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Square dilation by brute force over the Euclidean disk of `radius`.
inline MaskGrid dilate(const MaskGrid& m, int radius) {
  MaskGrid out = MaskGrid::Zero(m.rows(), m.cols());
  for (int y = 0; y < m.rows(); ++y)
    for (int x = 0; x < m.cols(); ++x) {
      if (!m(y, x)) continue;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          if (dx * dx + dy * dy > radius * radius) continue;
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && xx >= 0 && yy < m.rows() && xx < m.cols()) out(yy, xx) = 1;
        }
    }
  return out;
}

/// Hard-edged ellipse over a flat background.
struct EllipseFixture {
  mosaic::RgbImage image;
  MaskGrid truth;
};

inline EllipseFixture ellipse_fixture(int width, int height) {
  mosaic::Ellipse e;
  e.cx = width * 0.5;
  e.cy = height * 0.5;
  e.rx = width * 0.3;
  e.ry = height * 0.25;
  e.angle = 0.3;
  EllipseFixture f;
  f.truth = MaskGrid(height, width);
  f.image = mosaic::RgbImage(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const bool in = e.contains(x + 0.5, y + 0.5);
      f.truth(y, x) = in ? 1 : 0;
      auto* px = f.image.at(x, y);
      px[0] = in ? 210 : 40;
      px[1] = in ? 180 : 60;
      px[2] = in ? 60 : 90;
    }
  return f;
}

inline mosaic::RgbImage constant_image(int width, int height, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  mosaic::RgbImage img(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      auto* px = img.at(x, y);
      px[0] = r;
      px[1] = g;
      px[2] = b;
    }
  return img;
}

// ---- distance transform by brute force -------------------------------------

/// Distance from each pixel to the nearest pixel whose label differs from a
/// 4-neighbor (the same boundary definition as the refiner).
inline MapGrid distance_brute(const MaskGrid& m) {
  std::vector<std::pair<int, int>> boundary;
  for (int y = 0; y < m.rows(); ++y)
    for (int x = 0; x < m.cols(); ++x) {
      bool edge = false;
      static constexpr int kD[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
      for (const auto& d : kD) {
        const int yy = y + d[1], xx = x + d[0];
        if (yy >= 0 && xx >= 0 && yy < m.rows() && xx < m.cols() && m(yy, xx) != m(y, x)) edge = true;
      }
      if (edge) boundary.emplace_back(y, x);
    }
  MapGrid d(m.rows(), m.cols());
  for (int y = 0; y < m.rows(); ++y)
    for (int x = 0; x < m.cols(); ++x) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [by, bx] : boundary)
        best = std::min(best, std::hypot(static_cast<double>(by - y), static_cast<double>(bx - x)));
      d(y, x) = best;
    }
  return d;
}

// ---- requests ---------------------------------------------------------------

inline mosaic::GenerationRequest make_request(const mosaic::CanvasSpec& spec, mosaic::MosaicCenter center,
                                              mosaic::SplitAxis axis, const std::vector<std::string>& names,
                                              std::uint64_t seed, int steps) {
  mosaic::GenerationRequest r;
  r.plan = mosaic::plan_regions(spec, center, axis);
  for (std::size_t i = 0; i < r.plan.regions.size(); ++i) {
    const mosaic::Category c{static_cast<int>(i) + 1, names[i % names.size()], "", mosaic::Bucket::Rare};
    r.prompts.push_back(mosaic::build_prompt(c, mosaic::TemplateId::PhotoSingle));
  }
  r.seed = seed;
  r.steps = steps;
  return r;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mosaic-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Every regular file under `root` keyed by relative path.
inline std::map<std::string, std::string> read_tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[std::filesystem::relative(entry.path(), root).generic_string()] = ss.str();
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

/// Two-category catalog plus a config for a single four-object canvas.
inline std::filesystem::path two_category_setup(const std::filesystem::path& dir, std::uint64_t seed, int steps) {
  write_text(dir / "catalog.tsv",
             "id\tname\tbucket\tdefinition\n"
             "1\teasel\trare\tan upright tripod for displaying something\n"
             "2\tseaplane\trare\tan airplane that can land on or take off from water\n");
  const auto config = dir / "config.json";
  write_text(config, "{\n  \"seed\": " + std::to_string(seed) +
                         ",\n  \"canvas\": {\"object_count\": 4},\n  \"generation\": {\"steps\": " +
                         std::to_string(steps) +
                         "},\n  \"prompt\": {\"catalog\": \"catalog.tsv\", \"images_per_category\": 1},\n"
                         "  \"output\": {\"dir\": \"out\"}\n}\n");
  return config;
}

}  // namespace testkit
