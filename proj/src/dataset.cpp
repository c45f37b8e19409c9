#include "mosaic/dataset.hpp"

#include <nlohmann/json.hpp>

#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace mosaic {

using ordered_json = nlohmann::ordered_json;

namespace {

[[noreturn]] void invalid(long long image_id, const std::string& why) {
  throw DatasetError(DatasetErrc::ValidationError, "record " + std::to_string(image_id) + ": " + why);
}

[[noreturn]] void parse_failure(const std::string& why) { throw DatasetError(DatasetErrc::ParseError, why); }

ordered_json annotation_json(const Annotation& a) {
  return {{"id", a.id},
          {"image_id", a.image_id},
          {"category_id", a.category_id},
          {"region", a.region},
          {"bbox", {a.bbox.x, a.bbox.y, a.bbox.width, a.bbox.height}},
          {"area", a.area},
          {"iscrowd", 0},
          {"segmentation", {{"size", {a.segmentation.height, a.segmentation.width}}, {"counts", a.segmentation.counts}}},
          {"provenance",
           {{"threshold_used", a.provenance.threshold_used},
            {"component_count", a.provenance.component_count},
            {"area_fraction", a.provenance.area_fraction},
            {"refiner", a.provenance.refiner}}},
          {"referring_expressions", a.referring}};
}

Annotation annotation_from(const ordered_json& j) {
  Annotation a;
  a.id = j.at("id").get<long long>();
  a.image_id = j.at("image_id").get<long long>();
  a.category_id = j.at("category_id").get<int>();
  a.region = j.at("region").get<int>();
  const auto bbox = j.at("bbox").get<std::vector<int>>();
  if (bbox.size() != 4) parse_failure("annotation " + std::to_string(a.id) + ": bbox needs 4 numbers");
  a.bbox = {bbox[0], bbox[1], bbox[2], bbox[3]};
  a.area = j.at("area").get<long long>();
  const auto& seg = j.at("segmentation");
  const auto size = seg.at("size").get<std::vector<int>>();
  if (size.size() != 2) parse_failure("annotation " + std::to_string(a.id) + ": segmentation size needs 2 numbers");
  a.segmentation = {size[0], size[1], seg.at("counts").get<std::vector<long long>>()};
  const auto& prov = j.at("provenance");
  a.provenance.threshold_used = prov.at("threshold_used").get<double>();
  a.provenance.component_count = prov.at("component_count").get<int>();
  a.provenance.area_fraction = prov.at("area_fraction").get<double>();
  a.provenance.refiner = prov.at("refiner").get<std::string>();
  a.referring = j.value("referring_expressions", std::vector<std::string>{});
  return a;
}

ordered_json image_json(const DatasetRecord& r) {
  ordered_json rejections = ordered_json::array();
  for (const auto& rej : r.rejections)
    rejections.push_back({{"region", rej.region},
                          {"category_id", rej.category_id},
                          {"reason", to_string(rej.reason)},
                          {"area_fraction", rej.area_fraction},
                          {"component_count", rej.component_count}});
  return {{"id", r.image_id},
          {"file_name", r.file_name},
          {"width", r.width},
          {"height", r.height},
          {"regions_attempted", r.regions_attempted},
          {"rejections", rejections},
          {"generation",
           {{"seed", r.generation.seed},
            {"backend_id", r.generation.backend_id},
            {"config_digest", r.generation.config_digest},
            {"prompts", r.generation.prompts},
            {"category_ids", r.generation.category_ids},
            {"category_names", r.generation.category_names},
            {"definition_fallbacks", r.generation.definition_fallbacks}}}};
}

DatasetRecord image_from(const ordered_json& j) {
  DatasetRecord r;
  r.image_id = j.at("id").get<long long>();
  r.file_name = j.at("file_name").get<std::string>();
  r.width = j.at("width").get<int>();
  r.height = j.at("height").get<int>();
  r.regions_attempted = j.at("regions_attempted").get<int>();
  for (const auto& rej : j.at("rejections")) {
    RegionRejection out;
    out.region = rej.at("region").get<int>();
    out.category_id = rej.at("category_id").get<int>();
    out.reason = reject_reason_from_string(rej.at("reason").get<std::string>());
    out.area_fraction = rej.at("area_fraction").get<double>();
    out.component_count = rej.at("component_count").get<int>();
    r.rejections.push_back(out);
  }
  const auto& g = j.at("generation");
  r.generation.seed = g.at("seed").get<std::uint64_t>();
  r.generation.backend_id = g.at("backend_id").get<std::string>();
  r.generation.config_digest = g.at("config_digest").get<std::string>();
  r.generation.prompts = g.at("prompts").get<std::vector<std::string>>();
  r.generation.category_ids = g.at("category_ids").get<std::vector<int>>();
  r.generation.category_names = g.at("category_names").get<std::vector<std::string>>();
  r.generation.definition_fallbacks = g.at("definition_fallbacks").get<std::vector<int>>();
  return r;
}

template <typename Fn>
auto guarded(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    parse_failure(what + ": " + e.what());
  } catch (const MaskError& e) {
    parse_failure(what + ": " + e.what());
  }
}

}  // namespace

Annotation make_annotation(const InstanceMask& mask, long long id, long long image_id) {
  Annotation a;
  a.id = id;
  a.image_id = image_id;
  a.category_id = mask.category_id;
  a.region = mask.region;
  a.bbox = mask.bbox;
  a.area = mask.area;
  a.segmentation = encode_rle(mask.mask);
  a.provenance = mask.provenance;
  return a;
}

void validate_record(const DatasetRecord& record) {
  if (record.width <= 0 || record.height <= 0) invalid(record.image_id, "canvas size must be positive");
  if (record.regions_attempted != static_cast<int>(record.annotations.size() + record.rejections.size()))
    invalid(record.image_id, "regions_attempted disagrees with annotations + rejections");
  for (const auto& a : record.annotations) {
    if (a.image_id != record.image_id)
      invalid(record.image_id, "annotation " + std::to_string(a.id) + " points at image " + std::to_string(a.image_id));
    if (a.segmentation.height != record.height || a.segmentation.width != record.width)
      invalid(record.image_id, "annotation " + std::to_string(a.id) + ": segmentation size differs from the canvas");
    MaskGrid mask;
    try {
      mask = decode_rle(a.segmentation);
    } catch (const DatasetError& e) {
      invalid(record.image_id, "annotation " + std::to_string(a.id) + ": " + e.what());
    }
    if (mask.cast<long long>().sum() != a.area)
      invalid(record.image_id, "annotation " + std::to_string(a.id) + ": area disagrees with the RLE");
    if (tight_bbox(mask) != a.bbox)
      invalid(record.image_id, "annotation " + std::to_string(a.id) + ": bbox is not the tight box of the RLE");
  }
}

std::string record_to_json(const DatasetRecord& record) {
  ordered_json j = image_json(record);
  ordered_json anns = ordered_json::array();
  for (const auto& a : record.annotations) anns.push_back(annotation_json(a));
  j["annotations"] = anns;
  return j.dump(2) + "\n";
}

DatasetRecord record_from_json(const std::string& text) {
  return guarded("record", [&] {
    const auto j = ordered_json::parse(text);
    DatasetRecord r = image_from(j);
    for (const auto& a : j.at("annotations")) r.annotations.push_back(annotation_from(a));
    return r;
  });
}

void emit_coco(const std::vector<DatasetRecord>& records, const std::vector<Category>& categories, std::ostream& sink) {
  std::set<int> known;
  for (const auto& c : categories) known.insert(c.id);
  std::set<long long> image_ids;
  std::set<long long> annotation_ids;
  for (const auto& r : records) {
    validate_record(r);
    if (!image_ids.insert(r.image_id).second) invalid(r.image_id, "duplicate image id");
    for (const auto& a : r.annotations) {
      if (!known.count(a.category_id))
        invalid(r.image_id, "annotation " + std::to_string(a.id) + " uses unknown category " + std::to_string(a.category_id));
      if (!annotation_ids.insert(a.id).second) invalid(r.image_id, "duplicate annotation id " + std::to_string(a.id));
    }
  }

  ordered_json doc;
  doc["info"] = {{"description", "synthetic multi-object instance masks"}, {"version", "1.0"}};
  doc["images"] = ordered_json::array();
  doc["annotations"] = ordered_json::array();
  doc["categories"] = ordered_json::array();
  for (const auto& r : records) {
    doc["images"].push_back(image_json(r));
    for (const auto& a : r.annotations) doc["annotations"].push_back(annotation_json(a));
  }
  for (const auto& c : categories) {
    ordered_json entry = {{"id", c.id}, {"name", c.name}};
    if (c.bucket != Bucket::Unknown) entry["frequency"] = to_string(c.bucket).substr(0, 1);
    entry["definition"] = c.definition;
    doc["categories"].push_back(entry);
  }
  sink << doc.dump(2) << '\n';
  if (!sink) throw DatasetError(DatasetErrc::IoFailure, "failed to write the annotation document");
}

std::string emit_coco(const std::vector<DatasetRecord>& records, const std::vector<Category>& categories) {
  std::ostringstream out;
  emit_coco(records, categories, out);
  return out.str();
}

CocoDocument parse_coco(std::istream& source) {
  return guarded("annotation document", [&] {
    const auto j = ordered_json::parse(source);
    CocoDocument doc;
    std::map<long long, std::size_t> by_id;
    for (const auto& img : j.at("images")) {
      by_id[img.at("id").get<long long>()] = doc.records.size();
      doc.records.push_back(image_from(img));
    }
    for (const auto& a : j.at("annotations")) {
      Annotation ann = annotation_from(a);
      const auto it = by_id.find(ann.image_id);
      if (it == by_id.end()) parse_failure("annotation " + std::to_string(ann.id) + " references a missing image");
      doc.records[it->second].annotations.push_back(std::move(ann));
    }
    for (const auto& c : j.at("categories")) {
      Category cat;
      cat.id = c.at("id").get<int>();
      cat.name = c.at("name").get<std::string>();
      cat.bucket = c.contains("frequency") ? bucket_from_string(c["frequency"].get<std::string>()) : Bucket::Unknown;
      cat.definition = c.value("definition", std::string{});
      doc.categories.push_back(std::move(cat));
    }
    return doc;
  });
}

double iou(const MaskGrid& a, const MaskGrid& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DatasetError(DatasetErrc::LengthMismatch, "IoU of masks with different sizes");
  const auto sa = (a != 0);
  const auto sb = (b != 0);
  const long long inter = (sa && sb).cast<long long>().sum();
  const long long uni = (sa || sb).cast<long long>().sum();
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double miou(const std::vector<MaskGrid>& masks, const std::vector<MaskGrid>& references) {
  if (masks.size() != references.size())
    throw DatasetError(DatasetErrc::LengthMismatch, "mask lists differ in length (" + std::to_string(masks.size()) +
                                                        " vs " + std::to_string(references.size()) + ")");
  if (masks.empty()) return 1.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < masks.size(); ++i) sum += iou(masks[i], references[i]);
  return sum / static_cast<double>(masks.size());
}

std::vector<std::vector<std::string>> referring_expressions(const CanvasPlan& plan,
                                                            const std::vector<std::string>& names) {
  if (names.size() != plan.regions.size())
    throw DatasetError(DatasetErrc::LengthMismatch, "one category name per region is required");
  std::vector<std::vector<std::string>> out;
  if (plan.regions.size() != 4) {
    for (const auto& name : names) out.push_back({name});
    return out;
  }
  static const char* kVertical[4] = {"top", "top", "bottom", "bottom"};
  static const char* kHorizontal[4] = {"left", "right", "left", "right"};
  // Horizontal neighbour shares the row, vertical neighbour shares the column.
  static const int kRowMate[4] = {1, 0, 3, 2};
  static const int kColumnMate[4] = {2, 3, 0, 1};
  for (int i = 0; i < 4; ++i) {
    const std::string& c = names[static_cast<std::size_t>(i)];
    const std::string position = std::string(kVertical[i]) + " " + kHorizontal[i];
    const std::string side = i % 2 == 0 ? "left" : "right";
    const std::string level = i < 2 ? "above" : "below";
    out.push_back({c, position + " " + c, c + " on " + position,
                   "the " + c + " to the " + side + " of the " + names[static_cast<std::size_t>(kRowMate[i])] +
                       " and " + level + " the " + names[static_cast<std::size_t>(kColumnMate[i])]});
  }
  return out;
}

void RunStats::add(const DatasetRecord& record) {
  ++canvases_attempted;
  regions_attempted += record.regions_attempted;
  masks_accepted += static_cast<long long>(record.annotations.size());
  for (const auto& a : record.annotations) ++per_category[a.category_id];
  for (const auto& r : record.rejections) ++rejections[to_string(r.reason)];
}

void RunStats::merge(const RunStats& other) {
  canvases_attempted += other.canvases_attempted;
  regions_attempted += other.regions_attempted;
  masks_accepted += other.masks_accepted;
  for (const auto& [k, v] : other.rejections) rejections[k] += v;
  for (const auto& [k, v] : other.per_category) per_category[k] += v;
}

double RunStats::discard_rate() const {
  if (empty_run()) return 0.0;
  return 1.0 - static_cast<double>(masks_accepted) / static_cast<double>(regions_attempted);
}

bool RunStats::consistent() const {
  long long rejected = 0;
  for (const auto& [k, v] : rejections) rejected += v;
  return masks_accepted + rejected == regions_attempted;
}

std::string RunStats::to_json() const {
  ordered_json j;
  j["canvases_attempted"] = canvases_attempted;
  j["regions_attempted"] = regions_attempted;
  j["masks_accepted"] = masks_accepted;
  ordered_json rej = ordered_json::object();
  for (const char* reason : {"TooSmall", "TooLarge", "Fragmented"}) {
    const auto it = rejections.find(reason);
    rej[reason] = it == rejections.end() ? 0 : it->second;
  }
  j["rejections"] = rej;
  ordered_json cats = ordered_json::object();
  for (const auto& [id, count] : per_category) cats[std::to_string(id)] = count;
  j["per_category"] = cats;
  j["discard_rate"] = discard_rate();
  j["empty_run"] = empty_run();
  return j.dump(2) + "\n";
}

}  // namespace mosaic
