#include "mosaic/pipeline.hpp"

#include <zlib.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "mosaic/mfat.hpp"

namespace mosaic {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& why) {
  throw ConfigError(ConfigErrc::Invalid, path + ": " + why);
}

void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) config_error(path, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      config_error(path.empty() ? key : path + "." + key, "unknown key");
  }
}

std::string join(const std::string& path, const char* key) { return path.empty() ? key : path + "." + key; }

template <typename T>
void read(const json& obj, const std::string& path, const char* key, T& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj[key];
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::invalid_argument("boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw std::invalid_argument("integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw std::invalid_argument("number");
    } else {
      if (!v.is_string()) throw std::invalid_argument("string");
    }
    out = v.get<T>();
  } catch (const std::invalid_argument& e) {
    config_error(join(path, key), std::string("expected ") + e.what());
  } catch (const json::exception& e) {
    config_error(join(path, key), e.what());
  }
}

int parse_resolution_value(const json& v, const std::string& path) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "1/8") return 8;
    if (s == "1/16") return 16;
    if (s == "1/32") return 32;
  } else if (v.is_number_integer()) {
    const int d = v.get<int>();
    if (d == 8 || d == 16 || d == 32) return d;
  }
  config_error(path, "expected one of \"1/8\", \"1/16\", \"1/32\"");
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

std::uint32_t crc_bytes(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(DatasetErrc::IoFailure, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError(DatasetErrc::IoFailure, "cannot write " + path.string());
  out << text;
  if (!out) throw DatasetError(DatasetErrc::IoFailure, "write failed: " + path.string());
}

std::optional<std::string> file_crc(const fs::path& path) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) return std::nullopt;
  return hex32(crc_bytes(read_file(path)));
}

std::vector<Category> load_catalog_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(ConfigErrc::Invalid, "prompt.catalog: cannot open " + path.string());
  try {
    return load_catalog(in);
  } catch (const PromptError& e) {
    throw ConfigError(ConfigErrc::Invalid, std::string("prompt.catalog: ") + e.what());
  }
}

std::string canvas_stem(long long image_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld", image_id);
  return buf;
}

CanvasSpec spec_for(const PipelineConfig& config, int object_count, SplitAxis axis) {
  if (config.canvas.width > 0 && config.canvas.height > 0) {
    CanvasSpec spec = config.canvas;
    spec.object_count = object_count;
    return spec;
  }
  return canvas_for_objects(config.canvas, object_count, axis, config.region_width, config.region_height);
}

}  // namespace

// ---- configuration --------------------------------------------------------

void PipelineConfig::validate() const {
  const std::vector<int> counts = random_object_count ? std::vector<int>{1, 2, 4} : std::vector<int>{canvas.object_count};
  if (!random_object_count && canvas.object_count != 1 && canvas.object_count != 2 && canvas.object_count != 4)
    config_error("canvas.object_count", "must be 1, 2, 4 or \"random\"");
  if ((canvas.width > 0) != (canvas.height > 0)) config_error("canvas.width", "set both width and height or neither");
  if (region_width <= 0) config_error("canvas.region_width", "must be positive");
  if (region_height <= 0) config_error("canvas.region_height", "must be positive");
  for (int n : counts) {
    for (auto axis : {SplitAxis::Horizontal, SplitAxis::Vertical}) {
      try {
        spec_for(*this, n, axis).validate();
      } catch (const GeometryError& e) {
        throw ConfigError(ConfigErrc::Invalid, e.what());
      }
    }
  }
  if (steps < 1) config_error("generation.steps", "must be >= 1");
  if (!(guidance_scale > 0.0)) config_error("generation.guidance_scale", "must be > 0");
  if (images_per_category < 1) config_error("prompt.images_per_category", "must be >= 1");
  if (workers < 1) config_error("output.workers", "must be >= 1");
  try {
    aggregation.validate();
  } catch (const AttentionError& e) {
    throw ConfigError(ConfigErrc::Invalid, e.what());
  }
  if (aggregation.max_steps > steps && backend == BackendKind::Synthetic)
    config_error("aggregation.max_steps", "exceeds generation.steps");
  try {
    bilateral.validate();
    filter.validate();
  } catch (const MaskError& e) {
    throw ConfigError(ConfigErrc::Invalid, e.what());
  }
  if (backend == BackendKind::Synthetic) {
    if (catalog.empty()) config_error("prompt.catalog", "required for the synthetic backend");
    if (synthetic.heads < 1) config_error("backend.synthetic.heads", "must be >= 1");
    if (synthetic.projection_dim < 2) config_error("backend.synthetic.projection_dim", "must be >= 2");
    if (synthetic.layers.empty()) config_error("backend.synthetic.layers", "must list at least one layer");
    if (std::none_of(synthetic.layers.begin(), synthetic.layers.end(),
                     [&](const LayerInfo& l) { return l.resolution >= aggregation.max_resolution; }))
      config_error("aggregation.max_resolution", "no synthetic layer at or below this resolution");
  } else if (mfat_dir.empty()) {
    config_error("backend.mfat_dir", "required for the mfat_dir backend");
  }
}

PipelineConfig parse_config(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(ConfigErrc::Parse, std::string("config: ") + e.what());
  }
  PipelineConfig c;
  check_keys(j, "", {"seed", "canvas", "generation", "prompt", "aggregation", "bilateral", "filter", "backend", "output"});
  read(j, "", "seed", c.seed);

  if (j.contains("canvas")) {
    const auto& o = j["canvas"];
    check_keys(o, "canvas", {"width", "height", "object_count", "jitter_ratio", "overlap_x", "overlap_y",
                             "latent_factor", "region_width", "region_height"});
    read(o, "canvas", "width", c.canvas.width);
    read(o, "canvas", "height", c.canvas.height);
    if (o.contains("object_count")) {
      if (o["object_count"].is_string() && o["object_count"] == "random") {
        c.random_object_count = true;
      } else {
        read(o, "canvas", "object_count", c.canvas.object_count);
      }
    }
    read(o, "canvas", "jitter_ratio", c.canvas.jitter_ratio);
    read(o, "canvas", "overlap_x", c.canvas.overlap_x);
    read(o, "canvas", "overlap_y", c.canvas.overlap_y);
    read(o, "canvas", "latent_factor", c.canvas.latent_factor);
    read(o, "canvas", "region_width", c.region_width);
    read(o, "canvas", "region_height", c.region_height);
  }
  if (j.contains("generation")) {
    const auto& o = j["generation"];
    check_keys(o, "generation", {"steps", "guidance_scale", "scheduler"});
    read(o, "generation", "steps", c.steps);
    read(o, "generation", "guidance_scale", c.guidance_scale);
    read(o, "generation", "scheduler", c.scheduler);
  }
  if (j.contains("prompt")) {
    const auto& o = j["prompt"];
    check_keys(o, "prompt", {"template", "strategy", "catalog", "images_per_category"});
    std::string text;
    if (o.contains("template")) {
      read(o, "prompt", "template", text);
      try {
        c.template_id = template_from_string(text);
      } catch (const PromptError& e) {
        config_error("prompt.template", e.what());
      }
    }
    if (o.contains("strategy")) {
      read(o, "prompt", "strategy", text);
      try {
        c.strategy = strategy_from_string(text);
      } catch (const PromptError& e) {
        config_error("prompt.strategy", e.what());
      }
    }
    if (o.contains("catalog")) {
      read(o, "prompt", "catalog", text);
      c.catalog = fs::path(text).is_absolute() ? fs::path(text) : base_dir / text;
    }
    read(o, "prompt", "images_per_category", c.images_per_category);
  }
  if (j.contains("aggregation")) {
    const auto& o = j["aggregation"];
    check_keys(o, "aggregation", {"max_resolution", "max_steps"});
    if (o.contains("max_resolution")) c.aggregation.max_resolution = parse_resolution_value(o["max_resolution"], "aggregation.max_resolution");
    if (o.contains("max_steps")) {
      if (o["max_steps"].is_string() && o["max_steps"] == "all")
        c.aggregation.max_steps = 0;
      else
        read(o, "aggregation", "max_steps", c.aggregation.max_steps);
    }
  }
  if (j.contains("bilateral")) {
    const auto& o = j["bilateral"];
    check_keys(o, "bilateral", {"spatial_sigma", "luma_sigma", "chroma_sigma", "lambda", "iterations", "confidence_floor"});
    read(o, "bilateral", "spatial_sigma", c.bilateral.spatial_sigma);
    read(o, "bilateral", "luma_sigma", c.bilateral.luma_sigma);
    read(o, "bilateral", "chroma_sigma", c.bilateral.chroma_sigma);
    read(o, "bilateral", "lambda", c.bilateral.lambda);
    read(o, "bilateral", "iterations", c.bilateral.iterations);
    read(o, "bilateral", "confidence_floor", c.bilateral.confidence_floor);
  }
  if (j.contains("filter")) {
    const auto& o = j["filter"];
    check_keys(o, "filter", {"min_area_fraction", "max_area_fraction", "max_components", "connectivity"});
    read(o, "filter", "min_area_fraction", c.filter.min_area_fraction);
    read(o, "filter", "max_area_fraction", c.filter.max_area_fraction);
    read(o, "filter", "max_components", c.filter.max_components);
    read(o, "filter", "connectivity", c.filter.connectivity);
  }
  if (j.contains("backend")) {
    const auto& o = j["backend"];
    check_keys(o, "backend", {"kind", "mfat_dir", "synthetic"});
    std::string kind = "synthetic";
    read(o, "backend", "kind", kind);
    if (kind == "synthetic")
      c.backend = BackendKind::Synthetic;
    else if (kind == "mfat_dir")
      c.backend = BackendKind::MfatDir;
    else
      config_error("backend.kind", "expected \"synthetic\" or \"mfat_dir\"");
    if (o.contains("mfat_dir")) {
      std::string dir;
      read(o, "backend", "mfat_dir", dir);
      c.mfat_dir = fs::path(dir).is_absolute() ? fs::path(dir) : base_dir / dir;
    }
    if (o.contains("synthetic")) {
      const auto& s = o["synthetic"];
      check_keys(s, "backend.synthetic", {"heads", "projection_dim", "head_jitter", "dtype", "layers"});
      read(s, "backend.synthetic", "heads", c.synthetic.heads);
      read(s, "backend.synthetic", "projection_dim", c.synthetic.projection_dim);
      read(s, "backend.synthetic", "head_jitter", c.synthetic.head_jitter);
      if (s.contains("dtype")) {
        std::string dtype;
        read(s, "backend.synthetic", "dtype", dtype);
        if (dtype != "f16" && dtype != "f32") config_error("backend.synthetic.dtype", "expected \"f16\" or \"f32\"");
        c.synthetic.dtype = dtype_from_string(dtype);
      }
      if (s.contains("layers")) {
        if (!s["layers"].is_array()) config_error("backend.synthetic.layers", "expected an array of resolutions");
        c.synthetic.layers.clear();
        int id = 0;
        for (const auto& l : s["layers"])
          c.synthetic.layers.push_back({id++, parse_resolution_value(l, "backend.synthetic.layers")});
      }
    }
  }
  if (j.contains("output")) {
    const auto& o = j["output"];
    check_keys(o, "output", {"dir", "workers", "write_attention"});
    if (o.contains("dir")) {
      std::string dir;
      read(o, "output", "dir", dir);
      c.output = fs::path(dir).is_absolute() ? fs::path(dir) : base_dir / dir;
    }
    read(o, "output", "workers", c.workers);
    read(o, "output", "write_attention", c.write_attention);
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(ConfigErrc::Parse, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string config_to_json(const PipelineConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  ordered_json canvas = {{"width", c.canvas.width},
                         {"height", c.canvas.height},
                         {"jitter_ratio", c.canvas.jitter_ratio},
                         {"overlap_x", c.canvas.overlap_x},
                         {"overlap_y", c.canvas.overlap_y},
                         {"latent_factor", c.canvas.latent_factor},
                         {"region_width", c.region_width},
                         {"region_height", c.region_height}};
  if (c.random_object_count)
    canvas["object_count"] = "random";
  else
    canvas["object_count"] = c.canvas.object_count;
  j["canvas"] = canvas;
  j["generation"] = {{"steps", c.steps}, {"guidance_scale", c.guidance_scale}, {"scheduler", c.scheduler}};
  j["prompt"] = {{"template", to_string(c.template_id)},
                 {"strategy", to_string(c.strategy)},
                 {"catalog", c.catalog.filename().string()},
                 {"images_per_category", c.images_per_category}};
  j["aggregation"] = {{"max_resolution", "1/" + std::to_string(c.aggregation.max_resolution)},
                      {"max_steps", c.aggregation.max_steps}};
  j["bilateral"] = {{"spatial_sigma", c.bilateral.spatial_sigma}, {"luma_sigma", c.bilateral.luma_sigma},
                    {"chroma_sigma", c.bilateral.chroma_sigma},   {"lambda", c.bilateral.lambda},
                    {"iterations", c.bilateral.iterations},       {"confidence_floor", c.bilateral.confidence_floor}};
  j["filter"] = {{"min_area_fraction", c.filter.min_area_fraction},
                 {"max_area_fraction", c.filter.max_area_fraction},
                 {"max_components", c.filter.max_components},
                 {"connectivity", c.filter.connectivity}};
  ordered_json layers = ordered_json::array();
  for (const auto& l : c.synthetic.layers) layers.push_back("1/" + std::to_string(l.resolution));
  j["backend"] = {{"kind", c.backend == BackendKind::Synthetic ? "synthetic" : "mfat_dir"},
                  {"synthetic",
                   {{"heads", c.synthetic.heads},
                    {"projection_dim", c.synthetic.projection_dim},
                    {"head_jitter", c.synthetic.head_jitter},
                    {"dtype", to_string(c.synthetic.dtype)},
                    {"layers", layers}}}};
  // Output location and worker count do not change results.
  j["output"] = {{"write_attention", c.write_attention}};
  return j.dump(2) + "\n";
}

std::string config_digest(const PipelineConfig& config) { return hex32(crc_bytes(config_to_json(config))); }

// ---- mask stage -------------------------------------------------------------

CanvasOutcome process_result(const GenerationResult& result, const PipelineConfig& config, long long image_id,
                             const std::string& file_name, const std::vector<Category>& catalog) {
  const auto& plan = result.request.plan;
  CanvasOutcome out;
  auto& record = out.record;
  record.image_id = image_id;
  record.file_name = file_name;
  record.width = plan.spec.width;
  record.height = plan.spec.height;
  record.regions_attempted = static_cast<int>(plan.regions.size());
  record.generation.seed = result.request.seed;
  record.generation.backend_id = result.backend_id;
  record.generation.config_digest = config_digest(config);

  std::vector<std::string> names;
  for (const auto& prompt : result.request.prompts) {
    record.generation.prompts.push_back(prompt.text);
    record.generation.category_ids.push_back(prompt.category_id);
    std::string name = prompt.subject_text();
    for (const auto& c : catalog)
      if (c.id == prompt.category_id) name = c.name;
    names.push_back(name);
    record.generation.category_names.push_back(name);
  }
  for (std::size_t i = 0; i < result.request.prompts.size(); ++i)
    if (result.request.prompts[i].definition_fallback) record.generation.definition_fallbacks.push_back(plan.regions[i].index);
  const auto expressions = referring_expressions(plan, names);

  for (std::size_t i = 0; i < plan.regions.size(); ++i) {
    const auto& region = plan.regions[i];
    const int category_id = result.request.prompts[i].category_id;
    RegionRejection rejection{region.index, category_id, RejectReason::TooSmall, 0.0, 0};

    const AggregatedMap map = aggregate(result.stacks[i], result.token_map.subject[i], region, config.aggregation);
    if (map.degenerate) {
      record.rejections.push_back(rejection);
      continue;
    }
    OtsuResult coarse;
    try {
      coarse = otsu(map);
    } catch (const MaskError& e) {
      if (e.kind() != MaskErrc::DegenerateMap) throw;
      record.rejections.push_back(rejection);
      continue;
    }
    const RgbImage crop = result.image.crop(region.x, region.y, region.width, region.height);
    const RegionMask refined = refine(coarse.coarse, crop, config.bilateral);
    const Components labeled = components(refined.mask, config.filter.connectivity);
    const FilterOutcome verdict = filter(refined, labeled, config.filter, region);
    if (!verdict.accepted) {
      rejection.reason = verdict.reason;
      rejection.area_fraction = verdict.area_fraction;
      rejection.component_count = verdict.component_count;
      record.rejections.push_back(rejection);
      continue;
    }
    Provenance provenance{refined.threshold_used, verdict.component_count, verdict.area_fraction, "bilateral"};
    InstanceMask instance = expand(*verdict.accepted, region, plan.spec, category_id, provenance);
    Annotation annotation =
        make_annotation(instance, static_cast<long long>(record.annotations.size()) + 1, image_id);
    annotation.referring = expressions[i];
    record.annotations.push_back(std::move(annotation));
    out.masks.push_back(std::move(instance));
  }
  return out;
}

// ---- scheduling and the run -------------------------------------------------

std::vector<CanvasJob> schedule(const PipelineConfig& config, const std::vector<Category>& catalog) {
  std::size_t pool = 0;
  for (const auto& c : catalog)
    if (config.strategy == SamplingStrategy::AllBuckets || c.bucket == Bucket::Rare) ++pool;
  if (pool == 0)
    throw ConfigError(ConfigErrc::Invalid, "prompt.strategy: no catalog categories for " + to_string(config.strategy));
  const long long target = static_cast<long long>(config.images_per_category) * static_cast<long long>(pool);

  std::vector<CanvasJob> jobs;
  long long regions = 0;
  for (long long image_id = 1; regions < target; ++image_id) {
    SplitMix64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(image_id)));
    int n = config.canvas.object_count;
    if (config.random_object_count) {
      static constexpr int kCounts[3] = {1, 2, 4};
      n = kCounts[rng.uniform_int(0, 2)];
    }
    const SplitAxis axis = n == 2 ? (rng.uniform_int(0, 1) == 0 ? SplitAxis::Horizontal : SplitAxis::Vertical)
                                  : SplitAxis::None;
    const CanvasSpec spec = spec_for(config, n, axis);
    const MosaicCenter center = jitter_center(spec, rng);

    CanvasJob job;
    job.image_id = image_id;
    job.request.plan = plan_regions(spec, center, axis);
    job.categories = sample_categories(catalog, n, config.strategy, rng);
    for (const auto& c : job.categories) job.request.prompts.push_back(build_prompt(c, config.template_id));
    job.request.seed = rng.next();
    job.request.steps = config.steps;
    job.request.guidance_scale = config.guidance_scale;
    job.request.scheduler = config.scheduler;
    jobs.push_back(std::move(job));
    regions += n;
  }
  return jobs;
}

std::vector<DatasetRecord> renumber(std::vector<DatasetRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const DatasetRecord& a, const DatasetRecord& b) { return a.image_id < b.image_id; });
  long long next = 1;
  for (auto& r : records)
    for (auto& a : r.annotations) a.id = next++;
  return records;
}

std::vector<Category> categories_from_records(const std::vector<DatasetRecord>& records) {
  std::map<int, std::string> names;
  for (const auto& r : records)
    for (std::size_t i = 0; i < r.generation.category_ids.size() && i < r.generation.category_names.size(); ++i)
      names.emplace(r.generation.category_ids[i], r.generation.category_names[i]);
  std::vector<Category> out;
  for (const auto& [id, name] : names) out.push_back({id, name, "", Bucket::Unknown});
  return out;
}

namespace {

struct ManifestEntry {
  long long record_id = 0;
  std::string image;
  std::string mfat;
  std::string record;
  std::map<std::string, std::string> crc;
};

std::string manifest_line(const ManifestEntry& e) {
  ordered_json j = {{"record_id", e.record_id}, {"image", e.image}, {"mfat", e.mfat}, {"record", e.record}};
  ordered_json crc = ordered_json::object();
  for (const auto& [k, v] : e.crc) crc[k] = v;
  j["crc32"] = crc;
  return j.dump() + "\n";
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::vector<ManifestEntry> entries;
  std::ifstream in(path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      ManifestEntry e;
      e.record_id = j.at("record_id").get<long long>();
      e.image = j.at("image").get<std::string>();
      e.mfat = j.at("mfat").get<std::string>();
      e.record = j.at("record").get<std::string>();
      for (const auto& [k, v] : j.at("crc32").items()) e.crc[k] = v.get<std::string>();
      entries.push_back(std::move(e));
    } catch (const json::exception&) {
      // A torn final line after a crash is expected; skip it.
      continue;
    }
  }
  return entries;
}

bool verified(const ManifestEntry& e, const fs::path& root) {
  for (const auto& [name, path] : {std::pair{"image", e.image}, {"mfat", e.mfat}, {"record", e.record}}) {
    if (path.empty()) continue;
    const auto it = e.crc.find(name);
    if (it == e.crc.end()) return false;
    const auto actual = file_crc(root / path);
    if (!actual || *actual != it->second) return false;
  }
  return true;
}

DatasetRecord oracle_record(const GenerationResult& result, const SyntheticBackend& backend, long long image_id,
                            const std::string& file_name) {
  DatasetRecord record;
  record.image_id = image_id;
  record.file_name = file_name;
  record.width = result.request.plan.spec.width;
  record.height = result.request.plan.spec.height;
  record.regions_attempted = static_cast<int>(result.request.plan.regions.size());
  record.generation.seed = result.request.seed;
  record.generation.backend_id = result.backend_id;
  const auto masks = backend.oracle_masks(result.request);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto& prompt = result.request.prompts[i];
    record.generation.prompts.push_back(prompt.text);
    record.generation.category_ids.push_back(prompt.category_id);
    record.generation.category_names.push_back(prompt.subject_text());
    InstanceMask m;
    m.mask = masks[i];
    m.bbox = tight_bbox(m.mask);
    m.area = m.mask.cast<long long>().sum();
    m.category_id = prompt.category_id;
    m.region = result.request.plan.regions[i].index;
    m.provenance.refiner = "oracle";
    record.annotations.push_back(make_annotation(m, static_cast<long long>(i) + 1, image_id));
  }
  return record;
}

}  // namespace

RunSummary run(const PipelineConfig& config, const RunOptions& options) {
  config.validate();
  RunSummary summary;

  struct Work {
    long long image_id = 0;
    std::optional<CanvasJob> job;      // synthetic
    fs::path mfat_source;              // mfat_dir
  };
  std::vector<Work> work;
  std::vector<Category> catalog;
  if (config.backend == BackendKind::Synthetic) {
    catalog = load_catalog_file(config.catalog);
    for (auto& job : schedule(config, catalog)) work.push_back({job.image_id, std::move(job), {}});
  } else {
    if (!config.catalog.empty()) catalog = load_catalog_file(config.catalog);
    std::vector<fs::path> files;
    std::error_code ec;
    if (!fs::is_directory(config.mfat_dir, ec))
      throw BackendError(BackendErrc::BackendFailure, "mfat_dir " + config.mfat_dir.string() + " is not a directory");
    for (const auto& entry : fs::directory_iterator(config.mfat_dir))
      if (entry.is_regular_file() && entry.path().extension() == ".mfat") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    long long id = 0;
    for (auto& f : files) work.push_back({++id, std::nullopt, f});
  }
  summary.canvases = static_cast<int>(work.size());
  if (options.dry_run) return summary;

  const fs::path root = config.output;
  try {
    fs::create_directories(root / "records");
    if (config.backend == BackendKind::Synthetic) {
      fs::create_directories(root / "canvases");
      fs::create_directories(root / "oracle");
    }
  } catch (const fs::filesystem_error& e) {
    throw DatasetError(DatasetErrc::IoFailure, e.what());
  }

  std::map<long long, ManifestEntry> done;
  const fs::path manifest_path = root / "manifest.jsonl";
  for (auto& e : read_manifest(manifest_path))
    if (verified(e, root)) done[e.record_id] = e;

  std::vector<std::optional<DatasetRecord>> records(work.size());
  std::vector<ManifestEntry> entries(work.size());
  std::mutex manifest_mutex;
  std::ofstream manifest(manifest_path, std::ios::app);
  if (!manifest) throw DatasetError(DatasetErrc::IoFailure, "cannot open " + manifest_path.string());

  const SyntheticBackend synthetic(config.synthetic);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::atomic<int> resumed{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto process = [&](std::size_t index) {
    const Work& w = work[index];
    const std::string stem = canvas_stem(w.image_id);
    if (auto it = done.find(w.image_id); it != done.end()) {
      records[index] = record_from_json(read_file(root / it->second.record));
      entries[index] = it->second;
      ++resumed;
      return;
    }
    ManifestEntry entry;
    entry.record_id = w.image_id;
    GenerationResult result;
    std::string file_name;
    if (w.job) {
      SyntheticBackend backend(config.synthetic);
      result = generate(w.job->request, backend);
      file_name = "canvases/" + stem + ".png";
      if (config.write_attention) {
        try {
          write_mfat(result, root / "canvases" / (stem + ".mfat"));
        } catch (const MfatError& e) {
          throw DatasetError(DatasetErrc::IoFailure, e.what());
        }
        entry.mfat = "canvases/" + stem + ".mfat";
      } else {
        write_png(root / file_name, result.image);
      }
      entry.image = file_name;
      const DatasetRecord oracle = oracle_record(result, synthetic, w.image_id, file_name);
      write_file(root / "oracle" / (stem + ".json"), record_to_json(oracle));
    } else {
      result = read_mfat(w.mfat_source);
      // Read-only source; the record points at the image beside it.
      file_name = w.mfat_source.stem().string() + ".png";
      entry.image = "";
      entry.mfat = "";
    }
    CanvasOutcome outcome = process_result(result, config, w.image_id, file_name, catalog);
    entry.record = "records/" + stem + ".json";
    write_file(root / entry.record, record_to_json(outcome.record));
    for (const auto& [name, path] : {std::pair{"image", entry.image}, {"mfat", entry.mfat}, {"record", entry.record}})
      if (!path.empty()) entry.crc[name] = *file_crc(root / path);
    {
      std::lock_guard lock(manifest_mutex);
      manifest << manifest_line(entry) << std::flush;
    }
    records[index] = std::move(outcome.record);
    entries[index] = std::move(entry);
  };

  auto worker = [&] {
    while (!failed) {
      const std::size_t index = next++;
      if (index >= work.size()) return;
      try {
        process(index);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed = true;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const int threads = std::max(1, std::min<int>(config.workers, static_cast<int>(work.size())));
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }
  manifest.close();
  if (first_error) std::rethrow_exception(first_error);
  summary.resumed = resumed;

  std::vector<DatasetRecord> all;
  for (auto& r : records) all.push_back(std::move(*r));
  all = renumber(std::move(all));
  for (const auto& r : all) summary.stats.add(r);

  // Final manifest in record order so reruns produce identical bytes.
  std::string manifest_text;
  for (const auto& e : entries) manifest_text += manifest_line(e);
  write_file(manifest_path, manifest_text);

  const auto categories = catalog.empty() ? categories_from_records(all) : [&] {
    std::set<int> used;
    for (const auto& r : all)
      for (int id : r.generation.category_ids) used.insert(id);
    std::vector<Category> subset;
    for (const auto& c : catalog)
      if (used.count(c.id)) subset.push_back(c);
    return subset;
  }();
  write_file(root / "annotations.json", emit_coco(all, categories));
  write_file(root / "stats.json", summary.stats.to_json());
  return summary;
}

// ---- subcommand helpers -----------------------------------------------------

std::vector<DatasetRecord> load_records(const fs::path& dir_or_coco) {
  std::vector<DatasetRecord> records;
  std::error_code ec;
  if (fs::is_directory(dir_or_coco, ec)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir_or_coco))
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) records.push_back(record_from_json(read_file(f)));
    return records;
  }
  std::ifstream in(dir_or_coco);
  if (!in) throw DatasetError(DatasetErrc::IoFailure, "cannot read " + dir_or_coco.string());
  return parse_coco(in).records;
}

double evaluate(const std::vector<DatasetRecord>& predicted, const std::vector<DatasetRecord>& reference) {
  std::map<std::pair<std::string, int>, const Annotation*> refs;
  std::map<std::string, const DatasetRecord*> ref_records;
  for (const auto& r : reference) {
    ref_records[r.file_name] = &r;
    for (const auto& a : r.annotations) refs[{r.file_name, a.region}] = &a;
  }
  std::vector<MaskGrid> masks;
  std::vector<MaskGrid> truth;
  for (const auto& r : predicted) {
    for (const auto& a : r.annotations) {
      masks.push_back(decode_rle(a.segmentation));
      const auto it = refs.find({r.file_name, a.region});
      truth.push_back(it == refs.end() ? MaskGrid::Zero(r.height, r.width) : decode_rle(it->second->segmentation));
    }
  }
  return miou(masks, truth);
}

RunStats stats_from_manifest(const fs::path& manifest) {
  RunStats stats;
  std::error_code ec;
  if (!fs::is_regular_file(manifest, ec)) throw DatasetError(DatasetErrc::IoFailure, "cannot read " + manifest.string());
  for (const auto& e : read_manifest(manifest))
    stats.add(record_from_json(read_file(manifest.parent_path() / e.record)));
  return stats;
}

std::string plan_to_json(const CanvasPlan& plan) {
  ordered_json j;
  j["canvas"] = {{"width", plan.spec.width},
                 {"height", plan.spec.height},
                 {"object_count", plan.spec.object_count},
                 {"jitter_ratio", plan.spec.jitter_ratio},
                 {"overlap_x", plan.spec.overlap_x},
                 {"overlap_y", plan.spec.overlap_y},
                 {"latent_factor", plan.spec.latent_factor}};
  j["center"] = {{"x", plan.center.x}, {"y", plan.center.y}};
  j["split_axis"] = to_string(plan.split_axis);
  j["regions"] = ordered_json::array();
  for (std::size_t i = 0; i < plan.regions.size(); ++i) {
    const auto& r = plan.regions[i];
    ordered_json entry = {{"index", r.index}, {"x", r.x}, {"y", r.y}, {"width", r.width}, {"height", r.height}};
    if (i < plan.latent_regions.size()) {
      const auto& l = plan.latent_regions[i];
      entry["latent"] = {{"x", l.x}, {"y", l.y}, {"width", l.width}, {"height", l.height}};
    }
    j["regions"].push_back(entry);
  }
  return j.dump(2) + "\n";
}

RgbImage preview(const RgbImage& image, const std::vector<InstanceMask>& masks) {
  static constexpr std::uint8_t kPalette[4][3] = {{230, 25, 75}, {60, 180, 75}, {0, 130, 200}, {245, 130, 48}};
  RgbImage out = image;
  for (std::size_t m = 0; m < masks.size(); ++m) {
    const auto* color = kPalette[m % 4];
    const auto& mask = masks[m].mask;
    for (int y = 0; y < out.height && y < mask.rows(); ++y)
      for (int x = 0; x < out.width && x < mask.cols(); ++x) {
        if (!mask(y, x)) continue;
        auto* px = out.at(x, y);
        for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>((px[c] + color[c]) / 2);
      }
  }
  return out;
}

}  // namespace mosaic
