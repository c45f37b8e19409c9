#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mosaic/error.hpp"
#include "mosaic/rng.hpp"

namespace mosaic {

enum class GeometryErrc { InvalidSpec, InvalidCenter, NotDivisible };
using GeometryError = Error<GeometryErrc>;

/// Mosaic canvas parameters in pixels.
struct CanvasSpec {
  int width = 1024;
  int height = 768;
  int object_count = 4;  // 1, 2 or 4
  double jitter_ratio = 0.375;
  int overlap_x = 64;
  int overlap_y = 48;
  int latent_factor = 8;

  /// Throws GeometryError{InvalidSpec} naming the offending field.
  void validate() const;

  bool operator==(const CanvasSpec&) const = default;
};

struct MosaicCenter {
  int x = 0;
  int y = 0;
  bool operator==(const MosaicCenter&) const = default;
};

/// Pixel-space rectangle hosting one object. `index` is 1-based.
struct Region {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
  int index = 1;

  long long area() const { return static_cast<long long>(width) * height; }
  bool contains(int px, int py) const { return px >= x && px < x + width && py >= y && py < y + height; }
  bool operator==(const Region&) const = default;
};

/// Region divided by the latent factor; all fields in latent cells.
struct LatentRegion {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
  int parent = 1;
  bool operator==(const LatentRegion&) const = default;
};

/// Horizontal places the two regions side by side (cut at center.x);
/// vertical stacks them (cut at center.y).
enum class SplitAxis { None, Horizontal, Vertical };

std::string to_string(SplitAxis axis);
SplitAxis split_axis_from_string(const std::string& text);

struct CanvasPlan {
  CanvasSpec spec;
  MosaicCenter center;
  std::vector<Region> regions;
  std::vector<LatentRegion> latent_regions;
  SplitAxis split_axis = SplitAxis::None;

  bool operator==(const CanvasPlan&) const = default;
};

/// Admissible center interval [lo, hi] along one axis, both multiples of U.
struct CenterRange {
  int lo = 0;
  int hi = 0;
};
CenterRange center_range(int extent, double jitter_ratio, int latent_factor);

MosaicCenter jitter_center(const CanvasSpec& spec, SplitMix64& rng);

/// N=2 chooses the split axis with `rng`; other counts ignore it.
CanvasPlan plan_regions(const CanvasSpec& spec, const MosaicCenter& center, SplitMix64& rng);
CanvasPlan plan_regions(const CanvasSpec& spec, const MosaicCenter& center, SplitAxis axis);

/// Fills latent_regions; throws GeometryError{NotDivisible}.
CanvasPlan to_latent(CanvasPlan plan);

/// Canvas dimensions for N objects of a nominal region size (e.g. 512x384
/// gives 512x384, 1024x384 or 512x768, and 1024x768).
CanvasSpec canvas_for_objects(CanvasSpec base, int object_count, SplitAxis axis, int region_width,
                              int region_height);

}  // namespace mosaic
