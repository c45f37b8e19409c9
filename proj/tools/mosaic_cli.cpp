// mosaic-synth: plan, generate, mask and emit mosaic canvases.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "mosaic/mfat.hpp"
#include "mosaic/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mosaic;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kBackend = 3, kIo = 4 };

const char* kind_name(MfatErrc kind) {
  switch (kind) {
    case MfatErrc::BadMagic: return "BadMagic";
    case MfatErrc::VersionUnsupported: return "VersionUnsupported";
    case MfatErrc::CorruptIndex: return "CorruptIndex";
    case MfatErrc::ChecksumMismatch: return "ChecksumMismatch";
    case MfatErrc::IoFailure: return "IoFailure";
  }
  return "MfatError";
}

PipelineConfig config_or_default(const std::string& path) {
  if (path.empty()) {
    PipelineConfig c;
    c.catalog = "catalog.tsv";
    return c;
  }
  return load_config(path);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError(DatasetErrc::IoFailure, "cannot write " + path.string());
  out << text;
}

CanvasSpec canvas_spec(const PipelineConfig& c, int n, SplitAxis axis) {
  if (c.canvas.width > 0) {
    CanvasSpec spec = c.canvas;
    spec.object_count = n;
    return spec;
  }
  return canvas_for_objects(c.canvas, n, axis, c.region_width, c.region_height);
}

int run_command(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<int> workers,
                const std::string& backend, const std::string& out, bool dry_run) {
  PipelineConfig config = load_config(config_path);
  if (seed) config.seed = *seed;
  if (workers) config.workers = *workers;
  if (!backend.empty()) config.backend = backend == "synthetic" ? BackendKind::Synthetic : BackendKind::MfatDir;
  if (!out.empty()) config.output = out;
  config.validate();
  const RunSummary summary = run(config, {dry_run});
  if (dry_run) {
    std::cout << "canvases " << summary.canvases << "\n";
    return kOk;
  }
  std::cout << "canvases " << summary.canvases << " (resumed " << summary.resumed << ")\n"
            << "regions " << summary.stats.regions_attempted << ", accepted " << summary.stats.masks_accepted
            << ", discard rate " << summary.stats.discard_rate() << "\n";
  return kOk;
}

int plan_command(const std::string& config_path, std::optional<std::uint64_t> seed, long long canvas,
                 const std::vector<int>& center, int objects, const std::string& axis_text) {
  PipelineConfig config = config_or_default(config_path);
  if (seed) config.seed = *seed;
  // Same draw order as the scheduler so `plan` shows what `run` will use.
  SplitMix64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(canvas)));
  int n = config.canvas.object_count;
  if (config.random_object_count) {
    static constexpr int kCounts[3] = {1, 2, 4};
    n = kCounts[rng.uniform_int(0, 2)];
  }
  SplitAxis axis = n == 2 ? (rng.uniform_int(0, 1) == 0 ? SplitAxis::Horizontal : SplitAxis::Vertical)
                          : SplitAxis::None;
  if (objects > 0) n = objects;
  if (!axis_text.empty()) axis = split_axis_from_string(axis_text);
  if (n != 2) axis = SplitAxis::None;
  if (n == 2 && axis == SplitAxis::None) axis = SplitAxis::Horizontal;
  const CanvasSpec spec = canvas_spec(config, n, axis);
  spec.validate();
  MosaicCenter c = jitter_center(spec, rng);
  if (center.size() == 2) c = {center[0], center[1]};
  std::cout << plan_to_json(plan_regions(spec, c, axis));
  return kOk;
}

int masks_command(const std::string& file, const std::string& out, const std::string& config_path, long long image_id) {
  const PipelineConfig config = config_or_default(config_path);
  std::vector<Category> catalog;
  if (!config_path.empty() && !config.catalog.empty() && fs::exists(config.catalog)) {
    std::ifstream in(config.catalog);
    catalog = load_catalog(in);
  }
  const fs::path path(file);
  const GenerationResult result = read_mfat(path);
  const std::string stem = path.stem().string();
  const CanvasOutcome outcome = process_result(result, config, image_id, stem + ".png", catalog);
  const fs::path dir(out);
  fs::create_directories(dir);
  write_text(dir / (stem + ".record.json"), record_to_json(outcome.record));
  write_png(dir / (stem + ".preview.png"), preview(result.image, outcome.masks));
  std::cout << "accepted " << outcome.record.annotations.size() << " of " << outcome.record.regions_attempted << "\n";
  return kOk;
}

int dataset_command(const std::string& records_dir, const std::string& out, const std::string& catalog_path) {
  const auto records = renumber(load_records(records_dir));
  std::vector<Category> categories;
  if (catalog_path.empty()) {
    categories = categories_from_records(records);
  } else {
    std::ifstream in(catalog_path);
    if (!in) throw DatasetError(DatasetErrc::IoFailure, "cannot read " + catalog_path);
    std::set<int> used;
    for (const auto& r : records)
      for (const auto& a : r.annotations) used.insert(a.category_id);
    for (const auto& c : load_catalog(in))
      if (used.count(c.id)) categories.push_back(c);
  }
  write_text(out, emit_coco(records, categories));
  return kOk;
}

int eval_command(const std::string& predicted, const std::string& reference) {
  const double score = evaluate(load_records(predicted), load_records(reference));
  std::printf("mIoU %.6f\n", score);
  return kOk;
}

int stats_command(const std::string& manifest) {
  std::cout << stats_from_manifest(manifest).to_json();
  return kOk;
}

int catalog_command(const std::string& lvis, const std::string& out) {
  std::ifstream in(lvis);
  if (!in) throw DatasetError(DatasetErrc::IoFailure, "cannot read " + lvis);
  const auto catalog = catalog_from_lvis(in);
  std::ostringstream text;
  write_catalog(text, catalog);
  if (out.empty())
    std::cout << text.str();
  else
    write_text(out, text.str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mosaic canvas dataset synthesis"};
  app.require_subcommand(1);

  std::string config_path, backend, out, file, records_dir, catalog_path, lvis, manifest, predicted, reference,
      axis;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  bool dry_run = false;
  long long canvas = 1, image_id = 1;
  int objects = 0;
  std::vector<int> center;

  auto* run_cmd = app.add_subcommand("run", "Generate and mask every scheduled canvas");
  run_cmd->add_option("--config", config_path, "Config file (JSON)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", seed, "Override the config seed");
  run_cmd->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  run_cmd->add_option("--backend", backend, "Backend")->check(CLI::IsMember({"synthetic", "mfat_dir"}));
  run_cmd->add_option("--out", out, "Output directory");
  run_cmd->add_flag("--dry-run", dry_run, "Validate and schedule only");

  auto* plan_cmd = app.add_subcommand("plan", "Print the canvas plan");
  plan_cmd->add_option("--config", config_path, "Config file (JSON)")->check(CLI::ExistingFile);
  plan_cmd->add_option("--seed", seed, "Override the config seed");
  plan_cmd->add_option("--canvas", canvas, "1-based canvas index")->check(CLI::PositiveNumber);
  plan_cmd->add_option("--center", center, "Fixed center X,Y")->delimiter(',')->expected(2);
  plan_cmd->add_option("--objects", objects, "Object count")->check(CLI::IsMember({1, 2, 4}));
  plan_cmd->add_option("--axis", axis, "Split axis for two objects")->check(CLI::IsMember({"horizontal", "vertical"}));

  auto* masks_cmd = app.add_subcommand("masks", "Masks and a preview from one MFAT file");
  masks_cmd->add_option("file", file, "MFAT file")->required();
  masks_cmd->add_option("--out", out, "Output directory")->required();
  masks_cmd->add_option("--config", config_path, "Config file (JSON)")->check(CLI::ExistingFile);
  masks_cmd->add_option("--image-id", image_id, "Image id for the record")->check(CLI::PositiveNumber);

  auto* dataset_cmd = app.add_subcommand("dataset", "Assemble records into one COCO file");
  dataset_cmd->add_option("records", records_dir, "Directory of record JSON files")->required();
  dataset_cmd->add_option("--out", out, "COCO output file")->required();
  dataset_cmd->add_option("--catalog", catalog_path, "Catalog for category names");

  auto* eval_cmd = app.add_subcommand("eval", "Mean IoU of one mask set against another");
  eval_cmd->add_option("predicted", predicted, "Records directory or COCO file")->required();
  eval_cmd->add_option("reference", reference, "Records directory or COCO file")->required();

  auto* stats_cmd = app.add_subcommand("stats", "Run statistics from a manifest");
  stats_cmd->add_option("manifest", manifest, "manifest.jsonl")->required();

  auto* catalog_cmd = app.add_subcommand("catalog-convert", "LVIS categories to the catalog format");
  catalog_cmd->add_option("lvis", lvis, "LVIS annotation JSON")->required();
  catalog_cmd->add_option("--out", out, "Catalog file (stdout if omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return run_command(config_path, seed, workers, backend, out, dry_run);
    if (*plan_cmd) return plan_command(config_path, seed, canvas, center, objects, axis);
    if (*masks_cmd) return masks_command(file, out, config_path, image_id);
    if (*dataset_cmd) return dataset_command(records_dir, out, catalog_path);
    if (*eval_cmd) return eval_command(predicted, reference);
    if (*stats_cmd) return stats_command(manifest);
    if (*catalog_cmd) return catalog_command(lvis, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const GeometryError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const MfatError& e) {
    std::cerr << kind_name(e.kind()) << ": " << e.what() << "\n";
    return e.kind() == MfatErrc::IoFailure ? kIo : kBackend;
  } catch (const BackendError& e) {
    std::cerr << "backend failure: " << e.what() << "\n";
    return kBackend;
  } catch (const DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return e.kind() == DatasetErrc::IoFailure ? kIo : kOther;
  } catch (const ImageError& e) {
    std::cerr << "image error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
