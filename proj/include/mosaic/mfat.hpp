#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mosaic/backend.hpp"
#include "mosaic/error.hpp"

namespace mosaic {

enum class MfatErrc { BadMagic, VersionUnsupported, CorruptIndex, ChecksumMismatch, IoFailure };
using MfatError = Error<MfatErrc>;

inline constexpr std::uint8_t kMfatMagic[5] = {0x4D, 0x46, 0x41, 0x54, 0x01};
inline constexpr std::size_t kMfatAlignment = 64;

/// Container without the raster: the header names the PNG by relative path.
struct MfatContents {
  GenerationResult result;  // image left empty
  std::string image_ref;
};

std::vector<std::uint8_t> encode_mfat(const GenerationResult& result, const std::string& image_ref);
MfatContents decode_mfat(std::span<const std::uint8_t> bytes);

/// Writes `path` plus the image as `<stem>.png` beside it.
void write_mfat(const GenerationResult& result, const std::filesystem::path& path);
/// Reads the container and its PNG, then runs the ingest checks
/// (validate_result), so row sums and shapes are never trusted.
GenerationResult read_mfat(const std::filesystem::path& path);

std::string tensor_name(int region, int step, int layer);

}  // namespace mosaic
