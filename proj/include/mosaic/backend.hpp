#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mosaic/error.hpp"
#include "mosaic/geometry.hpp"
#include "mosaic/image.hpp"
#include "mosaic/prompt.hpp"

namespace mosaic {

enum class BackendErrc { BackendFailure, InvalidRequest, ShapeMismatch, InvalidResult };
using BackendError = Error<BackendErrc>;

struct GenerationRequest {
  CanvasPlan plan;
  std::vector<PromptSpec> prompts;  // one per region, in region order
  std::uint64_t seed = 0;
  int steps = 50;
  double guidance_scale = 7.5;
  std::string scheduler = "lms";

  void validate() const;
  bool operator==(const GenerationRequest&) const = default;
};

struct TokenMap {
  std::vector<std::vector<std::string>> tokens;  // per region
  std::vector<std::vector<int>> subject;         // per region, ordinals into tokens

  bool operator==(const TokenMap&) const = default;
};

enum class DType { F16, F32 };

std::string to_string(DType dtype);
DType dtype_from_string(const std::string& text);
inline std::size_t dtype_size(DType dtype) { return dtype == DType::F16 ? 2 : 4; }

/// Dense (heads, height, width, tokens) tensor. Values of an F16 tensor are
/// always exactly representable in binary16.
struct Tensor4 {
  int heads = 0;
  int height = 0;
  int width = 0;
  int tokens = 0;
  DType dtype = DType::F32;
  std::vector<float> values;

  Tensor4() = default;
  Tensor4(int n, int h, int w, int l, DType type = DType::F32)
      : heads(n), height(h), width(w), tokens(l), dtype(type), values(static_cast<std::size_t>(n) * h * w * l, 0.0f) {}

  std::size_t offset(int head, int y, int x, int token) const {
    return ((static_cast<std::size_t>(head) * height + y) * width + x) * tokens + token;
  }
  float& operator()(int head, int y, int x, int token) { return values[offset(head, y, x, token)]; }
  float operator()(int head, int y, int x, int token) const { return values[offset(head, y, x, token)]; }

  /// Rounds every value to binary16 and marks the tensor F16.
  void quantize_to_half();

  bool operator==(const Tensor4&) const = default;
};

/// Layer resolution class as a denominator of the pixel region size:
/// 8, 16 or 32 for 1/8, 1/16, 1/32.
struct LayerInfo {
  int id = 0;
  int resolution = 8;
  bool operator==(const LayerInfo&) const = default;
};

/// Expected attention-map extent for a region side at a resolution class,
/// following the stride-2 convolution chain (ceil division).
inline int layer_extent(int region_pixels, int resolution) { return (region_pixels + resolution - 1) / resolution; }

struct AttentionKey {
  int step = 0;   // 0 is the first denoising step
  int layer = 0;  // LayerInfo::id
  auto operator<=>(const AttentionKey&) const = default;
};

struct AttentionStack {
  int region = 1;
  std::vector<LayerInfo> layers;
  std::map<AttentionKey, Tensor4> entries;

  const LayerInfo* layer(int id) const;
  bool operator==(const AttentionStack&) const = default;
};

struct GenerationResult {
  RgbImage image;
  std::vector<AttentionStack> stacks;  // one per region
  TokenMap token_map;
  std::string backend_id;
  GenerationRequest request;

  bool operator==(const GenerationResult&) const = default;
};

/// Row-sum tolerance applied to every ingested attention row.
inline constexpr double kRowSumTolerance = 1e-3;

/// Checks image size, stack count, tensor shapes against the plan and the
/// token map, and the softmax row sums. Throws BackendError{InvalidResult}.
void validate_result(const GenerationResult& result);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  virtual GenerationResult generate(const GenerationRequest& request) = 0;
};

/// Validates the request, runs the backend and validates what comes back.
/// Any backend exception surfaces as BackendError{BackendFailure}.
GenerationResult generate(const GenerationRequest& request, Backend& backend);

/// Replays one MFAT file; the request only has to agree on region count.
class MfatFileBackend : public Backend {
 public:
  explicit MfatFileBackend(std::filesystem::path path) : path_(std::move(path)) {}
  std::string id() const override { return "mfat:" + path_.filename().string(); }
  GenerationResult generate(const GenerationRequest& request) override;

 private:
  std::filesystem::path path_;
};

}  // namespace mosaic
