#include "mosaic/mfat.hpp"

#include <zlib.h>

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mosaic/half.hpp"

namespace mosaic {

using ordered_json = nlohmann::ordered_json;

namespace {

[[noreturn]] void corrupt(const std::string& why) { throw MfatError(MfatErrc::CorruptIndex, why); }

std::uint32_t crc_of(const std::uint8_t* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::size_t align_up(std::size_t value) { return (value + kMfatAlignment - 1) / kMfatAlignment * kMfatAlignment; }

void put_u32(std::vector<std::uint8_t>& out, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::vector<std::uint8_t> tensor_bytes(const Tensor4& tensor) {
  std::vector<std::uint8_t> bytes(tensor.values.size() * dtype_size(tensor.dtype));
  std::size_t at = 0;
  for (float v : tensor.values) {
    if (tensor.dtype == DType::F16) {
      const std::uint16_t h = float_to_half(v);
      bytes[at++] = static_cast<std::uint8_t>(h);
      bytes[at++] = static_cast<std::uint8_t>(h >> 8);
    } else {
      const auto w = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) bytes[at++] = static_cast<std::uint8_t>(w >> (8 * i));
    }
  }
  return bytes;
}

std::string resolution_text(int denominator) { return "1/" + std::to_string(denominator); }

int parse_resolution(const std::string& text) {
  if (text == "1/8") return 8;
  if (text == "1/16") return 16;
  if (text == "1/32") return 32;
  corrupt("unsupported layer resolution '" + text + "'");
}

ordered_json header_for(const GenerationResult& result, const std::string& image_ref) {
  const auto& req = result.request;
  const auto& spec = req.plan.spec;
  ordered_json h;
  h["format"] = "MFAT";
  h["version"] = 1;
  h["backend_id"] = result.backend_id;
  h["canvas"] = {{"width", spec.width},
                 {"height", spec.height},
                 {"object_count", spec.object_count},
                 {"jitter_ratio", spec.jitter_ratio},
                 {"overlap_x", spec.overlap_x},
                 {"overlap_y", spec.overlap_y},
                 {"latent_factor", spec.latent_factor}};
  h["center"] = {{"x", req.plan.center.x}, {"y", req.plan.center.y}};
  h["split_axis"] = to_string(req.plan.split_axis);
  h["regions"] = ordered_json::array();
  for (std::size_t i = 0; i < req.plan.regions.size(); ++i) {
    const auto& r = req.plan.regions[i];
    ordered_json region = {{"index", r.index}, {"x", r.x}, {"y", r.y}, {"width", r.width}, {"height", r.height}};
    if (i < req.plan.latent_regions.size()) {
      const auto& l = req.plan.latent_regions[i];
      region["latent"] = {{"x", l.x}, {"y", l.y}, {"width", l.width}, {"height", l.height}};
    }
    h["regions"].push_back(region);
  }
  h["prompts"] = ordered_json::array();
  for (const auto& p : req.prompts) {
    h["prompts"].push_back({{"text", p.text},
                            {"subject", {p.subject.begin, p.subject.end}},
                            {"category_id", p.category_id},
                            {"template", to_string(p.template_id)},
                            {"definition_fallback", p.definition_fallback}});
  }
  h["token_map"] = ordered_json::array();
  for (std::size_t i = 0; i < result.token_map.tokens.size(); ++i) {
    h["token_map"].push_back({{"tokens", result.token_map.tokens[i]}, {"subject", result.token_map.subject[i]}});
  }
  h["generation"] = {{"scheduler", req.scheduler},
                     {"seed", req.seed},
                     {"steps", req.steps},
                     {"guidance_scale", req.guidance_scale}};
  h["stacks"] = ordered_json::array();
  for (const auto& stack : result.stacks) {
    ordered_json layers = ordered_json::array();
    for (const auto& l : stack.layers) layers.push_back({{"id", l.id}, {"resolution", resolution_text(l.resolution)}});
    h["stacks"].push_back({{"region", stack.region}, {"layers", layers}});
  }
  h["image"] = image_ref;
  return h;
}

template <typename T>
T field(const ordered_json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) corrupt(where + ": missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    corrupt(where + ": field '" + key + "' has the wrong type");
  }
}

AttentionKey parse_tensor_name(const std::string& name, int& region) {
  int step = 0;
  int layer = 0;
  char tail = 0;
  if (std::sscanf(name.c_str(), "region%d/t%d/layer%d%c", &region, &step, &layer, &tail) != 3)
    corrupt("malformed tensor name '" + name + "'");
  return {step, layer};
}

}  // namespace

std::string tensor_name(int region, int step, int layer) {
  return "region" + std::to_string(region) + "/t" + std::to_string(step) + "/layer" + std::to_string(layer);
}

std::vector<std::uint8_t> encode_mfat(const GenerationResult& result, const std::string& image_ref) {
  ordered_json header = header_for(result, image_ref);

  struct Pending {
    std::string name;
    const Tensor4* tensor;
    std::vector<std::uint8_t> bytes;
  };
  std::vector<Pending> pending;
  for (const auto& stack : result.stacks)
    for (const auto& [key, tensor] : stack.entries)
      pending.push_back({tensor_name(stack.region, key.step, key.layer), &tensor, tensor_bytes(tensor)});

  // Offsets depend on the header length; iterate until the layout is stable.
  std::string text;
  std::size_t payload_start = 0;
  for (std::size_t guess = align_up(9);;) {
    ordered_json table = ordered_json::array();
    std::size_t offset = guess;
    for (const auto& p : pending) {
      table.push_back({{"name", p.name},
                       {"dtype", to_string(p.tensor->dtype)},
                       {"shape", {p.tensor->heads, p.tensor->height, p.tensor->width, p.tensor->tokens}},
                       {"byte_offset", offset},
                       {"byte_length", p.bytes.size()},
                       {"crc32", crc_of(p.bytes.data(), p.bytes.size())}});
      offset = align_up(offset + p.bytes.size());
    }
    header["tensors"] = table;
    text = header.dump();
    payload_start = align_up(9 + text.size());
    if (payload_start == guess) break;
    guess = payload_start;
  }

  // payloads start on the alignment grid; nothing follows the last one
  std::size_t total = 9 + text.size();
  for (std::size_t offset = payload_start; const auto& p : pending) {
    total = offset + p.bytes.size();
    offset = align_up(total);
  }
  std::vector<std::uint8_t> out(total, 0);
  std::copy(std::begin(kMfatMagic), std::end(kMfatMagic), out.begin());
  put_u32(out, 5, static_cast<std::uint32_t>(text.size()));
  std::copy(text.begin(), text.end(), out.begin() + 9);
  std::size_t offset = payload_start;
  for (const auto& p : pending) {
    std::copy(p.bytes.begin(), p.bytes.end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
    offset = align_up(offset + p.bytes.size());
  }
  return out;
}

MfatContents decode_mfat(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 5 || !std::equal(kMfatMagic, kMfatMagic + 4, bytes.begin()))
    throw MfatError(MfatErrc::BadMagic, "not an MFAT container");
  if (bytes[4] != kMfatMagic[4])
    throw MfatError(MfatErrc::VersionUnsupported, "MFAT version " + std::to_string(bytes[4]) + " is not supported");
  if (bytes.size() < 9) corrupt("truncated header length");
  const std::size_t header_len = get_u32(bytes.data() + 5);
  if (header_len > bytes.size() - 9) corrupt("header extends past end of file");

  ordered_json h;
  try {
    h = ordered_json::parse(bytes.begin() + 9, bytes.begin() + 9 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::parse_error& e) {
    corrupt(std::string("header is not valid JSON: ") + e.what());
  }

  MfatContents contents;
  auto& result = contents.result;
  auto& req = result.request;
  result.backend_id = field<std::string>(h, "backend_id", "header");
  const auto& canvas = h.contains("canvas") ? h["canvas"] : ordered_json{};
  auto& spec = req.plan.spec;
  spec.width = field<int>(canvas, "width", "canvas");
  spec.height = field<int>(canvas, "height", "canvas");
  spec.object_count = field<int>(canvas, "object_count", "canvas");
  spec.jitter_ratio = field<double>(canvas, "jitter_ratio", "canvas");
  spec.overlap_x = field<int>(canvas, "overlap_x", "canvas");
  spec.overlap_y = field<int>(canvas, "overlap_y", "canvas");
  spec.latent_factor = field<int>(canvas, "latent_factor", "canvas");
  const auto& center = h.contains("center") ? h["center"] : ordered_json{};
  req.plan.center = {field<int>(center, "x", "center"), field<int>(center, "y", "center")};
  try {
    req.plan.split_axis = split_axis_from_string(field<std::string>(h, "split_axis", "header"));
  } catch (const GeometryError& e) {
    corrupt(e.what());
  }
  if (!h.contains("regions") || !h["regions"].is_array()) corrupt("header: missing 'regions'");
  for (const auto& r : h["regions"]) {
    req.plan.regions.push_back({field<int>(r, "x", "region"), field<int>(r, "y", "region"),
                                field<int>(r, "width", "region"), field<int>(r, "height", "region"),
                                field<int>(r, "index", "region")});
    if (r.contains("latent")) {
      const auto& l = r["latent"];
      req.plan.latent_regions.push_back({field<int>(l, "x", "latent"), field<int>(l, "y", "latent"),
                                         field<int>(l, "width", "latent"), field<int>(l, "height", "latent"),
                                         req.plan.regions.back().index});
    }
  }
  if (!h.contains("prompts") || !h["prompts"].is_array()) corrupt("header: missing 'prompts'");
  for (const auto& p : h["prompts"]) {
    PromptSpec prompt;
    prompt.text = field<std::string>(p, "text", "prompt");
    const auto span = field<std::vector<std::size_t>>(p, "subject", "prompt");
    if (span.size() != 2 || span[0] > span[1] || span[1] > prompt.text.size()) corrupt("prompt: bad subject span");
    prompt.subject = {span[0], span[1]};
    prompt.category_id = field<int>(p, "category_id", "prompt");
    try {
      prompt.template_id = template_from_string(field<std::string>(p, "template", "prompt"));
    } catch (const PromptError& e) {
      corrupt(e.what());
    }
    prompt.definition_fallback = p.value("definition_fallback", false);
    req.prompts.push_back(std::move(prompt));
  }
  if (!h.contains("token_map") || !h["token_map"].is_array()) corrupt("header: missing 'token_map'");
  for (const auto& t : h["token_map"]) {
    result.token_map.tokens.push_back(field<std::vector<std::string>>(t, "tokens", "token_map"));
    result.token_map.subject.push_back(field<std::vector<int>>(t, "subject", "token_map"));
  }
  const auto& gen = h.contains("generation") ? h["generation"] : ordered_json{};
  req.scheduler = field<std::string>(gen, "scheduler", "generation");
  req.seed = field<std::uint64_t>(gen, "seed", "generation");
  req.steps = field<int>(gen, "steps", "generation");
  req.guidance_scale = field<double>(gen, "guidance_scale", "generation");

  if (!h.contains("stacks") || !h["stacks"].is_array()) corrupt("header: missing 'stacks'");
  for (const auto& s : h["stacks"]) {
    AttentionStack stack;
    stack.region = field<int>(s, "region", "stack");
    if (!s.contains("layers") || !s["layers"].is_array()) corrupt("stack: missing 'layers'");
    for (const auto& l : s["layers"])
      stack.layers.push_back({field<int>(l, "id", "layer"), parse_resolution(field<std::string>(l, "resolution", "layer"))});
    result.stacks.push_back(std::move(stack));
  }
  contents.image_ref = field<std::string>(h, "image", "header");

  if (!h.contains("tensors") || !h["tensors"].is_array()) corrupt("header: missing 'tensors'");
  std::uint64_t end = 9 + header_len;
  for (const auto& t : h["tensors"]) {
    const auto name = field<std::string>(t, "name", "tensor");
    int region = 0;
    const auto key = parse_tensor_name(name, region);
    DType dtype;
    try {
      dtype = dtype_from_string(field<std::string>(t, "dtype", name));
    } catch (const BackendError& e) {
      corrupt(name + ": " + e.what());
    }
    const auto shape = field<std::vector<long long>>(t, "shape", name);
    if (shape.size() != 4) corrupt(name + ": shape must have 4 axes");
    for (auto extent : shape)
      if (extent <= 0 || extent > (1 << 20)) corrupt(name + ": invalid extent");
    const auto offset = field<std::uint64_t>(t, "byte_offset", name);
    const auto length = field<std::uint64_t>(t, "byte_length", name);
    const auto crc = field<std::uint32_t>(t, "crc32", name);
    const std::uint64_t count = static_cast<std::uint64_t>(shape[0]) * shape[1] * shape[2] * shape[3];
    if (length != count * dtype_size(dtype)) corrupt(name + ": byte_length disagrees with shape and dtype");
    if (offset < 9 + header_len || offset > bytes.size() || length > bytes.size() - offset)
      corrupt(name + ": payload [" + std::to_string(offset) + ", +" + std::to_string(length) + ") outside the file");
    end = std::max<std::uint64_t>(end, offset + length);
    const std::uint8_t* payload = bytes.data() + offset;
    if (crc_of(payload, length) != crc) throw MfatError(MfatErrc::ChecksumMismatch, name + ": crc32 mismatch");

    AttentionStack* stack = nullptr;
    for (auto& s : result.stacks)
      if (s.region == region) stack = &s;
    if (!stack) corrupt(name + ": no stack for region " + std::to_string(region));
    Tensor4 tensor(static_cast<int>(shape[0]), static_cast<int>(shape[1]), static_cast<int>(shape[2]),
                   static_cast<int>(shape[3]), dtype);
    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
      if (dtype == DType::F16) {
        tensor.values[i] = half_to_float(static_cast<std::uint16_t>(payload[2 * i] | payload[2 * i + 1] << 8));
      } else {
        tensor.values[i] = std::bit_cast<float>(get_u32(payload + 4 * i));
      }
    }
    if (!stack->entries.emplace(key, std::move(tensor)).second) corrupt(name + ": duplicate tensor");
  }
  if (end != bytes.size()) corrupt(std::to_string(bytes.size() - end) + " bytes after the last payload");
  return contents;
}

void write_mfat(const GenerationResult& result, const std::filesystem::path& path) {
  const std::string image_ref = path.stem().string() + ".png";
  try {
    write_png(path.parent_path() / image_ref, result.image);
  } catch (const ImageError& e) {
    throw MfatError(MfatErrc::IoFailure, e.what());
  }
  const auto bytes = encode_mfat(result, image_ref);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MfatError(MfatErrc::IoFailure, "cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw MfatError(MfatErrc::IoFailure, "write failed: " + path.string());
}

GenerationResult read_mfat(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MfatError(MfatErrc::IoFailure, "cannot open MFAT file: " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto contents = decode_mfat(bytes);
  try {
    contents.result.image = read_png(path.parent_path() / contents.image_ref);
  } catch (const ImageError& e) {
    throw MfatError(MfatErrc::IoFailure, e.what());
  }
  validate_result(contents.result);
  return std::move(contents.result);
}

}  // namespace mosaic
