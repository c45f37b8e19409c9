#include "mosaic/maskgen.hpp"

namespace mosaic {

std::string to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::TooSmall: return "TooSmall";
    case RejectReason::TooLarge: return "TooLarge";
    case RejectReason::Fragmented: return "Fragmented";
    case RejectReason::None: break;
  }
  return "None";
}

RejectReason reject_reason_from_string(const std::string& text) {
  if (text == "TooSmall") return RejectReason::TooSmall;
  if (text == "TooLarge") return RejectReason::TooLarge;
  if (text == "Fragmented") return RejectReason::Fragmented;
  if (text == "None") return RejectReason::None;
  throw MaskError(MaskErrc::InvalidParams, "unknown rejection reason '" + text + "'");
}

void FilterPolicy::validate() const {
  if (!(min_area_fraction > 0.0 && min_area_fraction < max_area_fraction && max_area_fraction < 1.0))
    throw MaskError(MaskErrc::InvalidParams, "filter: require 0 < min_area_fraction < max_area_fraction < 1");
  if (max_components < 1) throw MaskError(MaskErrc::InvalidParams, "filter.max_components must be >= 1");
  if (connectivity != 4 && connectivity != 8) throw MaskError(MaskErrc::InvalidParams, "filter.connectivity must be 4 or 8");
}

FilterOutcome filter(const RegionMask& mask, const Components& labeled, const FilterPolicy& policy,
                     const Region& region) {
  FilterOutcome out;
  long long area = 0;
  for (auto a : labeled.areas) area += a;
  out.component_count = labeled.count();
  out.area_fraction = region.area() > 0 ? static_cast<double>(area) / static_cast<double>(region.area()) : 0.0;
  if (!(out.area_fraction > policy.min_area_fraction)) {
    out.reason = RejectReason::TooSmall;
  } else if (!(out.area_fraction < policy.max_area_fraction)) {
    out.reason = RejectReason::TooLarge;
  } else if (out.component_count > policy.max_components) {
    out.reason = RejectReason::Fragmented;
  } else {
    out.accepted = mask;
  }
  return out;
}

BoundingBox tight_bbox(const MaskGrid& mask) {
  int x0 = static_cast<int>(mask.cols());
  int y0 = static_cast<int>(mask.rows());
  int x1 = -1;
  int y1 = -1;
  for (int y = 0; y < mask.rows(); ++y)
    for (int x = 0; x < mask.cols(); ++x)
      if (mask(y, x)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return {};
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

InstanceMask expand(const RegionMask& accepted, const Region& region, const CanvasSpec& canvas, int category_id,
                    const Provenance& provenance) {
  if (accepted.mask.rows() != region.height || accepted.mask.cols() != region.width)
    throw MaskError(MaskErrc::ShapeMismatch, "region mask does not match region " + std::to_string(region.index));
  InstanceMask out;
  out.mask = MaskGrid::Zero(canvas.height, canvas.width);
  out.mask.block(region.y, region.x, region.height, region.width) = accepted.mask;
  out.bbox = tight_bbox(out.mask);
  out.area = out.mask.cast<long long>().sum();
  out.category_id = category_id;
  out.region = region.index;
  out.provenance = provenance;
  return out;
}

}  // namespace mosaic
