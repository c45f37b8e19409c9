#pragma once

#include <vector>

#include "mosaic/backend.hpp"
#include "mosaic/error.hpp"
#include "mosaic/geometry.hpp"
#include "mosaic/image.hpp"

namespace mosaic {

enum class AttentionErrc { EmptySelection, SubjectMissing, InvalidConfig };
using AttentionError = Error<AttentionErrc>;

struct AggregationConfig {
  /// Coarsest-first layer filter as a resolution denominator: 32 keeps only
  /// 1/32 layers, 16 keeps 1/32 and 1/16, 8 keeps all.
  int max_resolution = 8;
  /// Number of leading denoising steps to include; 0 means all of them.
  int max_steps = 0;

  void validate() const;
};

struct AggregatedMap {
  int region = 1;
  MapGrid values;  // region height x width, in [0, 1]
  bool degenerate = false;
};

/// Resize-then-average over every selected (step, layer) entry of the
/// subject channels (mean over heads and subject tokens), then min-max
/// normalize once.
AggregatedMap aggregate(const AttentionStack& stack, const std::vector<int>& subject_tokens, const Region& region,
                        const AggregationConfig& cfg = {});

/// Min-max normalization in place; returns false (and zeroes the map) for
/// constant input.
bool normalize_min_max(MapGrid& values);

}  // namespace mosaic
