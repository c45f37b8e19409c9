#include "mosaic/attention.hpp"

#include "mosaic/resize.hpp"

namespace mosaic {

void AggregationConfig::validate() const {
  if (max_resolution != 8 && max_resolution != 16 && max_resolution != 32)
    throw AttentionError(AttentionErrc::InvalidConfig, "aggregation.max_resolution must be 8, 16 or 32");
  if (max_steps < 0) throw AttentionError(AttentionErrc::InvalidConfig, "aggregation.max_steps must be >= 0");
}

bool normalize_min_max(MapGrid& values) {
  if (values.size() == 0) return false;
  const double lo = values.minCoeff();
  const double hi = values.maxCoeff();
  if (!(hi - lo > 1e-12 * std::max(1.0, std::abs(hi)))) {
    values.setZero();
    return false;
  }
  values = (values - lo) / (hi - lo);
  return true;
}

AggregatedMap aggregate(const AttentionStack& stack, const std::vector<int>& subject_tokens, const Region& region,
                        const AggregationConfig& cfg) {
  cfg.validate();
  if (subject_tokens.empty())
    throw AttentionError(AttentionErrc::SubjectMissing, "region " + std::to_string(region.index) + ": no subject tokens");

  MapGrid sum = MapGrid::Zero(region.height, region.width);
  long long included = 0;
  for (const auto& [key, tensor] : stack.entries) {
    const LayerInfo* layer = stack.layer(key.layer);
    if (!layer || layer->resolution < cfg.max_resolution) continue;
    if (cfg.max_steps > 0 && key.step >= cfg.max_steps) continue;
    for (int k : subject_tokens)
      if (k < 0 || k >= tensor.tokens)
        throw AttentionError(AttentionErrc::SubjectMissing,
                             "subject token " + std::to_string(k) + " outside the token axis");

    MapGrid native = MapGrid::Zero(tensor.height, tensor.width);
    const double weight = 1.0 / (static_cast<double>(tensor.heads) * subject_tokens.size());
    for (int h = 0; h < tensor.heads; ++h)
      for (int y = 0; y < tensor.height; ++y)
        for (int x = 0; x < tensor.width; ++x) {
          double acc = 0.0;
          for (int k : subject_tokens) acc += tensor(h, y, x, k);
          native(y, x) += acc;
        }
    native *= weight;
    sum += resize_bicubic(native, region.height, region.width);
    ++included;
  }
  if (included == 0)
    throw AttentionError(AttentionErrc::EmptySelection,
                         "region " + std::to_string(region.index) + ": filters exclude every attention entry");

  AggregatedMap out;
  out.region = region.index;
  out.values = sum / static_cast<double>(included);
  out.degenerate = !normalize_min_max(out.values);
  return out;
}

}  // namespace mosaic
