#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mosaic/error.hpp"
#include "mosaic/geometry.hpp"
#include "mosaic/image.hpp"
#include "mosaic/maskgen.hpp"
#include "mosaic/prompt.hpp"

namespace mosaic {

enum class DatasetErrc { RleOverrun, RleIncomplete, ValidationError, ParseError, IoFailure, LengthMismatch };
using DatasetError = Error<DatasetErrc>;

/// COCO uncompressed RLE: column-major runs alternating 0s and 1s, always
/// starting with a (possibly empty) run of 0s.
struct Rle {
  int height = 0;
  int width = 0;
  std::vector<long long> counts;
  bool operator==(const Rle&) const = default;
};

Rle encode_rle(const MaskGrid& mask);
MaskGrid decode_rle(const Rle& rle);

struct Annotation {
  long long id = 0;
  long long image_id = 0;
  int category_id = 0;
  int region = 1;
  BoundingBox bbox;
  long long area = 0;
  Rle segmentation;
  Provenance provenance;
  std::vector<std::string> referring;  // referring expressions for this object
  bool operator==(const Annotation&) const = default;
};

Annotation make_annotation(const InstanceMask& mask, long long id, long long image_id);

struct RegionRejection {
  int region = 1;
  int category_id = 0;
  RejectReason reason = RejectReason::None;
  double area_fraction = 0.0;
  int component_count = 0;
  bool operator==(const RegionRejection&) const = default;
};

struct GenerationMeta {
  std::uint64_t seed = 0;
  std::string backend_id;
  std::string config_digest;
  std::vector<std::string> prompts;
  std::vector<int> category_ids;          // per region
  std::vector<std::string> category_names;  // per region
  std::vector<int> definition_fallbacks;  // region indices that fell back to photo_single
  bool operator==(const GenerationMeta&) const = default;
};

struct DatasetRecord {
  long long image_id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  int regions_attempted = 0;
  std::vector<Annotation> annotations;
  std::vector<RegionRejection> rejections;
  GenerationMeta generation;
  bool operator==(const DatasetRecord&) const = default;
};

/// Checks record invariants: annotation image ids, RLE against bbox and
/// area, region accounting. Throws DatasetError{ValidationError}.
void validate_record(const DatasetRecord& record);

std::string record_to_json(const DatasetRecord& record);
DatasetRecord record_from_json(const std::string& text);

struct CocoDocument {
  std::vector<DatasetRecord> records;
  std::vector<Category> categories;
  bool operator==(const CocoDocument&) const = default;
};

/// Deterministic COCO-style document: fixed key order, no timestamps, LF
/// line ending. Throws DatasetError{ValidationError} naming the record.
void emit_coco(const std::vector<DatasetRecord>& records, const std::vector<Category>& categories, std::ostream& sink);
std::string emit_coco(const std::vector<DatasetRecord>& records, const std::vector<Category>& categories);
CocoDocument parse_coco(std::istream& source);

double iou(const MaskGrid& a, const MaskGrid& b);
/// Mean IoU over aligned pairs; a pair of empty masks scores 1.
double miou(const std::vector<MaskGrid>& masks, const std::vector<MaskGrid>& references);

/// Four templates per object for four-region canvases (bare name, "top left
/// c", "c on top left", neighbour relation); other layouts get the name only.
std::vector<std::vector<std::string>> referring_expressions(const CanvasPlan& plan,
                                                            const std::vector<std::string>& names);

struct RunStats {
  long long canvases_attempted = 0;
  long long regions_attempted = 0;
  long long masks_accepted = 0;
  std::map<std::string, long long> rejections;  // by reason name
  std::map<int, long long> per_category;        // accepted instances

  void add(const DatasetRecord& record);
  void merge(const RunStats& other);
  bool empty_run() const { return regions_attempted == 0; }
  double discard_rate() const;
  /// accepted + sum(rejections) == regions attempted
  bool consistent() const;

  std::string to_json() const;
};

}  // namespace mosaic
