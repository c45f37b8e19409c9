#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mosaic/attention.hpp"
#include "mosaic/backend.hpp"
#include "mosaic/dataset.hpp"
#include "mosaic/error.hpp"
#include "mosaic/geometry.hpp"
#include "mosaic/maskgen.hpp"
#include "mosaic/prompt.hpp"
#include "mosaic/synthetic.hpp"

namespace mosaic {

enum class ConfigErrc { Parse, Invalid };
using ConfigError = Error<ConfigErrc>;

enum class BackendKind { Synthetic, MfatDir };

struct PipelineConfig {
  std::uint64_t seed = 0;

  /// width/height of 0 derive the canvas from the region size and N.
  CanvasSpec canvas{0, 0, 4, 0.375, 64, 48, 8};
  bool random_object_count = false;
  int region_width = 512;
  int region_height = 384;

  int steps = 50;
  double guidance_scale = 7.5;
  std::string scheduler = "lms";

  TemplateId template_id = TemplateId::PhotoSingleDef;
  SamplingStrategy strategy = SamplingStrategy::AllBuckets;
  std::filesystem::path catalog;
  int images_per_category = 25;

  AggregationConfig aggregation;
  BilateralParams bilateral;
  FilterPolicy filter;

  BackendKind backend = BackendKind::Synthetic;
  std::filesystem::path mfat_dir;
  SyntheticOptions synthetic;

  std::filesystem::path output = "out";
  int workers = 1;
  bool write_attention = true;

  /// Throws ConfigError{Invalid} with the dotted field path.
  void validate() const;
};

/// Parses the JSON config; relative paths resolve against `base_dir`.
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
/// Canonical JSON of the effective configuration.
std::string config_to_json(const PipelineConfig& config);
/// Hex crc32 of config_to_json.
std::string config_digest(const PipelineConfig& config);

/// Mask stage for one generation result: aggregate, Otsu, refine, label,
/// filter, expand. Annotation ids are 1..k local to the record.
struct CanvasOutcome {
  DatasetRecord record;
  std::vector<InstanceMask> masks;  // accepted, in region order
};
CanvasOutcome process_result(const GenerationResult& result, const PipelineConfig& config, long long image_id,
                             const std::string& file_name, const std::vector<Category>& catalog = {});

/// One scheduled canvas before generation.
struct CanvasJob {
  long long image_id = 0;
  GenerationRequest request;
  std::vector<Category> categories;
};

/// Canvas count is ceil(images_per_category * pool / N); with a random N
/// canvases are added until the region total reaches the target.
std::vector<CanvasJob> schedule(const PipelineConfig& config, const std::vector<Category>& catalog);

struct RunOptions {
  bool dry_run = false;
};

struct RunSummary {
  RunStats stats;
  int canvases = 0;
  int resumed = 0;
};

/// Writes canvases/, records/, oracle/ (synthetic only), manifest.jsonl,
/// annotations.json and stats.json under config.output.
RunSummary run(const PipelineConfig& config, const RunOptions& options = {});

/// Annotation ids renumbered densely in image order.
std::vector<DatasetRecord> renumber(std::vector<DatasetRecord> records);

/// Records and categories derived from record metadata when no catalog.
std::vector<Category> categories_from_records(const std::vector<DatasetRecord>& records);

std::vector<DatasetRecord> load_records(const std::filesystem::path& dir_or_coco);

/// Mean IoU of every annotation in `predicted` against the reference mask
/// with the same (file name, region); a missing reference counts as empty.
double evaluate(const std::vector<DatasetRecord>& predicted, const std::vector<DatasetRecord>& reference);

RunStats stats_from_manifest(const std::filesystem::path& manifest);

std::string plan_to_json(const CanvasPlan& plan);

/// Colors each accepted mask over the image for quick inspection.
RgbImage preview(const RgbImage& image, const std::vector<InstanceMask>& masks);

}  // namespace mosaic
