#include "mosaic/geometry.hpp"

#include <cmath>
#include <sstream>

namespace mosaic {

namespace {

int floor_multiple(double value, int unit) { return static_cast<int>(std::floor(value / unit)) * unit; }
int ceil_multiple(double value, int unit) { return static_cast<int>(std::ceil(value / unit)) * unit; }

// Nearest multiple of unit; exact ties go down.
int snap(double value, int unit) {
  const double lower = std::floor(value / unit) * unit;
  const double upper = lower + unit;
  return static_cast<int>(value - lower <= upper - value ? lower : upper);
}

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
  throw GeometryError(GeometryErrc::InvalidSpec, "canvas." + field + ": " + why);
}

bool center_ok(const CanvasSpec& spec, const MosaicCenter& c) {
  const auto rx = center_range(spec.width, spec.jitter_ratio, spec.latent_factor);
  const auto ry = center_range(spec.height, spec.jitter_ratio, spec.latent_factor);
  return c.x >= rx.lo && c.x <= rx.hi && c.y >= ry.lo && c.y <= ry.hi && c.x % spec.latent_factor == 0 &&
         c.y % spec.latent_factor == 0;
}

}  // namespace

std::string to_string(SplitAxis axis) {
  switch (axis) {
    case SplitAxis::Horizontal: return "horizontal";
    case SplitAxis::Vertical: return "vertical";
    case SplitAxis::None: break;
  }
  return "none";
}

SplitAxis split_axis_from_string(const std::string& text) {
  if (text == "horizontal") return SplitAxis::Horizontal;
  if (text == "vertical") return SplitAxis::Vertical;
  if (text == "none") return SplitAxis::None;
  throw GeometryError(GeometryErrc::InvalidSpec, "unknown split axis '" + text + "'");
}

CenterRange center_range(int extent, double jitter_ratio, int latent_factor) {
  return {ceil_multiple(jitter_ratio * extent, latent_factor),
          floor_multiple((1.0 - jitter_ratio) * extent, latent_factor)};
}

void CanvasSpec::validate() const {
  if (latent_factor <= 0) invalid("latent_factor", "must be a positive integer");
  if (width <= 0) invalid("width", "must be positive");
  if (height <= 0) invalid("height", "must be positive");
  if (width % latent_factor != 0) invalid("width", "must be divisible by latent_factor");
  if (height % latent_factor != 0) invalid("height", "must be divisible by latent_factor");
  if (object_count != 1 && object_count != 2 && object_count != 4) invalid("object_count", "must be 1, 2 or 4");
  if (!(jitter_ratio > 0.0 && jitter_ratio <= 0.5)) invalid("jitter_ratio", "must lie in (0, 0.5]");
  if (overlap_x < 0 || overlap_x % (2 * latent_factor) != 0)
    invalid("overlap_x", "must be a non-negative multiple of 2*latent_factor");
  if (overlap_y < 0 || overlap_y % (2 * latent_factor) != 0)
    invalid("overlap_y", "must be a non-negative multiple of 2*latent_factor");

  const auto rx = center_range(width, jitter_ratio, latent_factor);
  const auto ry = center_range(height, jitter_ratio, latent_factor);
  if (rx.lo > rx.hi) invalid("jitter_ratio", "no latent-aligned center column in the jitter interval");
  if (ry.lo > ry.hi) invalid("jitter_ratio", "no latent-aligned center row in the jitter interval");
  // The half overlap has to fit inside the narrowest possible quadrant.
  if (overlap_x / 2 > std::min(rx.lo, width - rx.hi)) invalid("overlap_x", "exceeds the smallest quadrant width");
  if (overlap_y / 2 > std::min(ry.lo, height - ry.hi)) invalid("overlap_y", "exceeds the smallest quadrant height");
}

MosaicCenter jitter_center(const CanvasSpec& spec, SplitMix64& rng) {
  spec.validate();
  const int u = spec.latent_factor;
  const auto rx = center_range(spec.width, spec.jitter_ratio, u);
  const auto ry = center_range(spec.height, spec.jitter_ratio, u);
  const double sx = spec.jitter_ratio * spec.width;
  const double sy = spec.jitter_ratio * spec.height;
  const double raw_x = rng.uniform(sx, (1.0 - spec.jitter_ratio) * spec.width);
  const double raw_y = rng.uniform(sy, (1.0 - spec.jitter_ratio) * spec.height);
  return {std::clamp(snap(raw_x, u), rx.lo, rx.hi), std::clamp(snap(raw_y, u), ry.lo, ry.hi)};
}

CanvasPlan plan_regions(const CanvasSpec& spec, const MosaicCenter& center, SplitMix64& rng) {
  SplitAxis axis = SplitAxis::None;
  if (spec.object_count == 2) axis = rng.uniform_int(0, 1) == 0 ? SplitAxis::Horizontal : SplitAxis::Vertical;
  return plan_regions(spec, center, axis);
}

CanvasPlan plan_regions(const CanvasSpec& spec, const MosaicCenter& center, SplitAxis axis) {
  spec.validate();
  if (!center_ok(spec, center)) {
    std::ostringstream msg;
    msg << "center (" << center.x << ", " << center.y << ") outside the admissible latent-aligned rectangle";
    throw GeometryError(GeometryErrc::InvalidCenter, msg.str());
  }
  CanvasPlan plan;
  plan.spec = spec;
  plan.center = center;
  const int W = spec.width;
  const int H = spec.height;
  const int x = center.x;
  const int y = center.y;
  const int hx = spec.overlap_x / 2;
  const int hy = spec.overlap_y / 2;

  switch (spec.object_count) {
    case 1:
      plan.regions = {{0, 0, W, H, 1}};
      break;
    case 2:
      if (axis == SplitAxis::None)
        throw GeometryError(GeometryErrc::InvalidSpec, "two-object canvas requires a split axis");
      plan.split_axis = axis;
      if (axis == SplitAxis::Horizontal) {
        plan.regions = {{0, 0, x + hx, H, 1}, {x - hx, 0, W - x + hx, H, 2}};
      } else {
        plan.regions = {{0, 0, W, y + hy, 1}, {0, y - hy, W, H - y + hy, 2}};
      }
      break;
    default:
      plan.regions = {
          {0, 0, x + hx, y + hy, 1},
          {x - hx, 0, W - x + hx, y + hy, 2},
          {0, y - hy, x + hx, H - y + hy, 3},
          {x - hx, y - hy, W - x + hx, H - y + hy, 4},
      };
      break;
  }
  return to_latent(std::move(plan));
}

CanvasPlan to_latent(CanvasPlan plan) {
  const int u = plan.spec.latent_factor;
  plan.latent_regions.clear();
  for (const auto& r : plan.regions) {
    if (r.x % u || r.y % u || r.width % u || r.height % u) {
      std::ostringstream msg;
      msg << "region " << r.index << " (" << r.x << ", " << r.y << ", " << r.width << ", " << r.height
          << ") not divisible by " << u;
      throw GeometryError(GeometryErrc::NotDivisible, msg.str());
    }
    plan.latent_regions.push_back({r.x / u, r.y / u, r.width / u, r.height / u, r.index});
  }
  return plan;
}

CanvasSpec canvas_for_objects(CanvasSpec base, int object_count, SplitAxis axis, int region_width,
                              int region_height) {
  base.object_count = object_count;
  base.width = region_width;
  base.height = region_height;
  if (object_count == 4) {
    base.width = 2 * region_width;
    base.height = 2 * region_height;
  } else if (object_count == 2) {
    if (axis == SplitAxis::Vertical)
      base.height = 2 * region_height;
    else
      base.width = 2 * region_width;
  }
  return base;
}

}  // namespace mosaic
