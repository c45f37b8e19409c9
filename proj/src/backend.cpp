#include "mosaic/backend.hpp"

#include <cmath>
#include <sstream>

#include "mosaic/half.hpp"
#include "mosaic/mfat.hpp"

namespace mosaic {

namespace {

[[noreturn]] void invalid_result(const std::string& why) { throw BackendError(BackendErrc::InvalidResult, why); }

}  // namespace

std::string to_string(DType dtype) { return dtype == DType::F16 ? "f16" : "f32"; }

DType dtype_from_string(const std::string& text) {
  if (text == "f16") return DType::F16;
  if (text == "f32") return DType::F32;
  throw BackendError(BackendErrc::InvalidResult, "unknown dtype '" + text + "'");
}

void Tensor4::quantize_to_half() {
  for (auto& v : values) v = quantize_half(v);
  dtype = DType::F16;
}

const LayerInfo* AttentionStack::layer(int id) const {
  for (const auto& info : layers)
    if (info.id == id) return &info;
  return nullptr;
}

void GenerationRequest::validate() const {
  try {
    plan.spec.validate();
  } catch (const GeometryError& e) {
    throw BackendError(BackendErrc::InvalidRequest, e.what());
  }
  if (prompts.size() != plan.regions.size())
    throw BackendError(BackendErrc::InvalidRequest, "prompt count " + std::to_string(prompts.size()) +
                                                        " does not match region count " +
                                                        std::to_string(plan.regions.size()));
  if (steps < 1) throw BackendError(BackendErrc::InvalidRequest, "steps must be >= 1");
  if (!(guidance_scale > 0.0)) throw BackendError(BackendErrc::InvalidRequest, "guidance_scale must be > 0");
}

void validate_result(const GenerationResult& result) {
  const auto& plan = result.request.plan;
  if (result.image.width != plan.spec.width || result.image.height != plan.spec.height)
    invalid_result("image size does not match the canvas");
  if (result.stacks.size() != plan.regions.size()) invalid_result("expected one attention stack per region");
  if (result.token_map.tokens.size() != plan.regions.size() || result.token_map.subject.size() != plan.regions.size())
    invalid_result("token map does not cover every region");

  for (std::size_t r = 0; r < result.stacks.size(); ++r) {
    const auto& stack = result.stacks[r];
    const auto& region = plan.regions[r];
    const int token_count = static_cast<int>(result.token_map.tokens[r].size());
    const auto& subject = result.token_map.subject[r];
    if (subject.empty()) invalid_result("region " + std::to_string(region.index) + ": empty subject token list");
    for (int k : subject)
      if (k < 0 || k >= token_count)
        invalid_result("region " + std::to_string(region.index) + ": subject token index out of range");
    if (stack.region != region.index) invalid_result("stack order does not follow region order");

    for (const auto& [key, tensor] : stack.entries) {
      std::ostringstream where;
      where << "region " << region.index << " step " << key.step << " layer " << key.layer;
      const LayerInfo* info = stack.layer(key.layer);
      if (!info) invalid_result(where.str() + ": undeclared layer");
      if (key.step < 0 || key.step >= result.request.steps) invalid_result(where.str() + ": step out of range");
      if (tensor.height != layer_extent(region.height, info->resolution) ||
          tensor.width != layer_extent(region.width, info->resolution))
        invalid_result(where.str() + ": spatial shape disagrees with the layer resolution");
      if (tensor.tokens != token_count) invalid_result(where.str() + ": token axis disagrees with the token map");
      if (tensor.heads < 1) invalid_result(where.str() + ": no heads");
      if (tensor.values.size() != static_cast<std::size_t>(tensor.heads) * tensor.height * tensor.width * tensor.tokens)
        invalid_result(where.str() + ": value count disagrees with shape");

      const std::size_t rows = tensor.values.size() / static_cast<std::size_t>(tensor.tokens);
      for (std::size_t row = 0; row < rows; ++row) {
        double sum = 0.0;
        for (int k = 0; k < tensor.tokens; ++k) {
          const float v = tensor.values[row * static_cast<std::size_t>(tensor.tokens) + static_cast<std::size_t>(k)];
          if (!(v >= 0.0f) || !std::isfinite(v)) invalid_result(where.str() + ": negative or non-finite attention");
          sum += v;
        }
        if (std::abs(sum - 1.0) > kRowSumTolerance) {
          std::ostringstream msg;
          msg << where.str() << ": attention row " << row << " sums to " << sum;
          invalid_result(msg.str());
        }
      }
    }
  }
}

GenerationResult generate(const GenerationRequest& request, Backend& backend) {
  request.validate();
  GenerationResult result;
  try {
    result = backend.generate(request);
    validate_result(result);
  } catch (const BackendError& e) {
    if (e.kind() == BackendErrc::BackendFailure) throw;
    throw BackendError(BackendErrc::BackendFailure, "backend " + backend.id() + ": " + e.what());
  } catch (const std::exception& e) {
    throw BackendError(BackendErrc::BackendFailure, "backend " + backend.id() + ": " + e.what());
  }
  return result;
}

GenerationResult MfatFileBackend::generate(const GenerationRequest& request) {
  auto result = read_mfat(path_);
  if (!request.plan.regions.empty() && request.plan.regions.size() != result.request.plan.regions.size())
    throw BackendError(BackendErrc::BackendFailure, "MFAT file " + path_.string() + " holds " +
                                                        std::to_string(result.request.plan.regions.size()) +
                                                        " regions, request has " +
                                                        std::to_string(request.plan.regions.size()));
  return result;
}

}  // namespace mosaic
