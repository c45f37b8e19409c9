#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mosaic/attention.hpp"
#include "mosaic/error.hpp"
#include "mosaic/geometry.hpp"
#include "mosaic/image.hpp"

namespace mosaic {

enum class MaskErrc { DegenerateMap, SolverDiverged, ShapeMismatch, InvalidParams };
using MaskError = Error<MaskErrc>;

enum class MaskStage { Coarse, Refined };

struct RegionMask {
  MaskGrid mask;  // region height x width, values in {0, 1}
  double threshold_used = 0.0;
  MaskStage stage = MaskStage::Coarse;
};

// ---- Otsu ---------------------------------------------------------------

inline constexpr int kOtsuBins = 256;

/// Bin of a value in [0, 1]: bins are (k/256, (k+1)/256], bin 0 also takes 0.
/// With this convention `value > (k+1)/256` holds exactly when bin > k.
int otsu_bin(double value);

struct OtsuResult {
  int bin = 0;             // last background bin
  double threshold = 0.0;  // (bin + 1) / 256
  RegionMask coarse;
};

/// Maximizes between-class variance over the 255 bin boundaries, comparing
/// candidates exactly in integer arithmetic; ties go to the lower threshold.
/// Throws MaskError{DegenerateMap}.
OtsuResult otsu(const AggregatedMap& map);
OtsuResult otsu(const MapGrid& values);

// ---- Bilateral refinement -----------------------------------------------

struct BilateralParams {
  double spatial_sigma = 16.0;
  double luma_sigma = 8.0;
  double chroma_sigma = 8.0;
  double lambda = 128.0;
  int iterations = 25;
  double confidence_floor = 0.1;

  void validate() const;
};

/// Solver diagnostics, mostly for tests.
struct RefineReport {
  int free_pixels = 0;
  int grid_vertices = 0;
  double initial_residual = 0.0;
  double final_residual = 0.0;
};

/// Edge-aware refinement of a coarse mask against the region's pixels.
/// Pixels farther than spatial_sigma from the coarse boundary keep
/// their coarse label; the rest solve the bilateral-affinity smoothness
/// problem with a distance-ramped confidence and are binarized at 0.5.
RegionMask refine(const RegionMask& coarse, const RgbImage& reference, const BilateralParams& params = {},
                  RefineReport* report = nullptr);

/// Euclidean distance from each pixel to the nearest label boundary pixel.
MapGrid boundary_distance(const MaskGrid& mask);

// ---- Connected components -----------------------------------------------

struct Components {
  Grid<int> labels;               // 0 = background, 1..count
  std::vector<long long> areas;   // areas[label - 1]
  int count() const { return static_cast<int>(areas.size()); }
};

/// Two-pass union-find labeling. Labels follow raster order of each
/// component's first pixel.
Components components(const MaskGrid& mask, int connectivity = 8);

// ---- Filtering ----------------------------------------------------------

struct FilterPolicy {
  double min_area_fraction = 0.05;
  double max_area_fraction = 0.95;
  int max_components = 1;
  int connectivity = 8;

  void validate() const;
};

enum class RejectReason { None, TooSmall, TooLarge, Fragmented };
std::string to_string(RejectReason reason);
RejectReason reject_reason_from_string(const std::string& text);

struct FilterOutcome {
  std::optional<RegionMask> accepted;
  RejectReason reason = RejectReason::None;
  double area_fraction = 0.0;
  int component_count = 0;
};

/// Accepts when min < area fraction < max (strict) and the component count
/// is within the policy; area is checked before fragmentation.
FilterOutcome filter(const RegionMask& mask, const Components& labeled, const FilterPolicy& policy,
                     const Region& region);

// ---- Expansion to the canvas --------------------------------------------

struct BoundingBox {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
  bool operator==(const BoundingBox&) const = default;
};

BoundingBox tight_bbox(const MaskGrid& mask);

struct Provenance {
  double threshold_used = 0.0;
  int component_count = 0;
  double area_fraction = 0.0;
  std::string refiner = "bilateral";  // slot for an external refiner tag
  bool operator==(const Provenance&) const = default;
};

struct InstanceMask {
  MaskGrid mask;  // canvas height x width
  BoundingBox bbox;
  long long area = 0;
  int category_id = 0;
  int region = 1;
  Provenance provenance;
};

InstanceMask expand(const RegionMask& accepted, const Region& region, const CanvasSpec& canvas, int category_id,
                    const Provenance& provenance = {});

}  // namespace mosaic
