#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "mosaic/backend.hpp"

namespace mosaic {

/// Rotated ellipse in region-local pixel coordinates.
struct Ellipse {
  double cx = 0.0;
  double cy = 0.0;
  double rx = 1.0;
  double ry = 1.0;
  double angle = 0.0;  // radians

  /// Normalized radius: < 1 inside, 1 on the boundary.
  double radius_at(double x, double y) const;
  bool contains(double x, double y) const { return radius_at(x, y) < 1.0; }
  /// Rasterizes over pixel centers of a width x height grid.
  MaskGrid rasterize(int width, int height) const;
};

struct SyntheticSceneParams {
  Ellipse blob;
  int region_width = 0;
  int region_height = 0;
  Eigen::MatrixXd keys;           // tokens x d
  std::vector<int> subject_tokens;
  int projection_dim = 4;
  int heads = 2;
  int steps = 50;
  double head_jitter = 0.15;
  std::uint64_t seed = 0;
};

/// Row-wise softmax(Q K^T / sqrt(d)) for each head, where head h
/// uses Q + jitter[h]. Q is (h*w) x d, K is tokens x d.
/// Throws BackendError{ShapeMismatch}.
Tensor4 softmax_attention(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys, int height, int width,
                          const std::vector<Eigen::MatrixXd>& head_offsets = {});

/// Queries whose subject logit tracks the signed ellipse interior, sharper
/// at later steps.
Eigen::MatrixXd synthetic_queries(const SyntheticSceneParams& params, int step, int height, int width);

/// Subject logits are a(step) * s(p); the other tokens share a bias chosen
/// so the subject channel mass is exactly 0.5 on the ellipse boundary.
Eigen::MatrixXd synthetic_keys(int token_count, const std::vector<int>& subject, int projection_dim,
                               SplitMix64& rng);

Tensor4 synthetic_attention(const SyntheticSceneParams& params, int step, const LayerInfo& layer);

struct SyntheticOptions {
  int heads = 2;
  int projection_dim = 4;
  double head_jitter = 0.15;
  std::vector<LayerInfo> layers = {{0, 8}, {1, 16}, {2, 32}, {3, 32}, {4, 16}, {5, 8}};
  DType dtype = DType::F16;
};

/// Deterministic procedural backend: renders one hard-edged ellipse per
/// region and emits attention stacks that localize it.
class SyntheticBackend : public Backend {
 public:
  explicit SyntheticBackend(SyntheticOptions options = {}) : options_(std::move(options)) {}

  std::string id() const override { return "synthetic-v1"; }
  GenerationResult generate(const GenerationRequest& request) override;

  /// The generating ellipse of each region (region-local coordinates).
  std::vector<SyntheticSceneParams> scene(const GenerationRequest& request) const;
  /// Ground-truth full-canvas masks, one per region.
  std::vector<MaskGrid> oracle_masks(const GenerationRequest& request) const;

  const SyntheticOptions& options() const { return options_; }

 private:
  SyntheticOptions options_;
};

}  // namespace mosaic
