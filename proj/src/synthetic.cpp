#include "mosaic/synthetic.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mosaic/tokenizer.hpp"

namespace mosaic {

namespace {

constexpr double kMinSharpness = 3.0;
constexpr double kMaxSharpness = 14.0;
constexpr double kNoiseFeature = 0.05;

struct Rgb {
  int r, g, b;
};

double luma(const Rgb& c) { return 0.299 * c.r + 0.587 * c.g + 0.114 * c.b; }

Rgb random_color(SplitMix64& rng, int lo, int hi) {
  return {static_cast<int>(rng.uniform_int(lo, hi)), static_cast<int>(rng.uniform_int(lo, hi)),
          static_cast<int>(rng.uniform_int(lo, hi))};
}

std::uint8_t clamp_byte(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

// Deterministic per-pixel dither in [-2, 2].
int dither(std::uint64_t seed, int x, int y, int channel) {
  const auto h = mix_seed(seed, (static_cast<std::uint64_t>(y) << 32) ^ (static_cast<std::uint64_t>(x) << 2) ^
                                    static_cast<std::uint64_t>(channel));
  return static_cast<int>(h % 5) - 2;
}

std::uint64_t region_seed(std::uint64_t seed, int region) { return mix_seed(seed, 0x5245474fULL + region); }

}  // namespace

double Ellipse::radius_at(double x, double y) const {
  const double dx = x - cx;
  const double dy = y - cy;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double u = (c * dx + s * dy) / rx;
  const double v = (-s * dx + c * dy) / ry;
  return std::sqrt(u * u + v * v);
}

MaskGrid Ellipse::rasterize(int width, int height) const {
  MaskGrid mask = MaskGrid::Zero(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) mask(y, x) = contains(x + 0.5, y + 0.5) ? 1 : 0;
  return mask;
}

Tensor4 softmax_attention(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys, int height, int width,
                          const std::vector<Eigen::MatrixXd>& head_offsets) {
  if (queries.cols() != keys.cols() || keys.cols() < 1)
    throw BackendError(BackendErrc::ShapeMismatch, "query and key projection widths differ");
  if (queries.rows() != static_cast<Eigen::Index>(height) * width)
    throw BackendError(BackendErrc::ShapeMismatch, "query rows do not match the spatial grid");
  const int heads = head_offsets.empty() ? 1 : static_cast<int>(head_offsets.size());
  for (const auto& offset : head_offsets)
    if (offset.rows() != queries.rows() || offset.cols() != queries.cols())
      throw BackendError(BackendErrc::ShapeMismatch, "head offset shape differs from the queries");

  const int tokens = static_cast<int>(keys.rows());
  const double scale = 1.0 / std::sqrt(static_cast<double>(keys.cols()));
  Tensor4 out(heads, height, width, tokens);
  for (int h = 0; h < heads; ++h) {
    Eigen::MatrixXd logits =
        head_offsets.empty() ? Eigen::MatrixXd(queries * keys.transpose()) : Eigen::MatrixXd((queries + head_offsets[h]) * keys.transpose());
    logits *= scale;
    for (Eigen::Index p = 0; p < logits.rows(); ++p) {
      const double peak = logits.row(p).maxCoeff();
      Eigen::RowVectorXd row = (logits.row(p).array() - peak).exp();
      row /= row.sum();
      const int y = static_cast<int>(p / width);
      const int x = static_cast<int>(p % width);
      for (int k = 0; k < tokens; ++k) out(h, y, x, k) = static_cast<float>(row(k));
    }
  }
  return out;
}

Eigen::MatrixXd synthetic_keys(int token_count, const std::vector<int>& subject, int projection_dim,
                               SplitMix64& rng) {
  const int d = std::max(projection_dim, 2);
  const double root_d = std::sqrt(static_cast<double>(d));
  const int k = static_cast<int>(subject.size());
  const int others = token_count - k;
  // Bias making sum(subject) / max == sigmoid(a * s) for the mean channel.
  const double bias = others > 0 ? -std::log(static_cast<double>(others) / k) : 0.0;
  Eigen::MatrixXd keys = Eigen::MatrixXd::Zero(token_count, d);
  for (int t = 0; t < token_count; ++t) {
    const bool is_subject = std::find(subject.begin(), subject.end(), t) != subject.end();
    if (is_subject) {
      keys(t, 0) = root_d;
    } else {
      keys(t, 1) = root_d * bias;
      for (int c = 2; c < d; ++c) keys(t, c) = root_d * rng.uniform(-1.0, 1.0);
    }
  }
  return keys;
}

Eigen::MatrixXd synthetic_queries(const SyntheticSceneParams& params, int step, int height, int width) {
  const int d = static_cast<int>(params.keys.cols());
  const double progress = params.steps > 1 ? static_cast<double>(step) / (params.steps - 1) : 1.0;
  const double sharpness = kMinSharpness + (kMaxSharpness - kMinSharpness) * progress;
  SplitMix64 rng(mix_seed(params.seed, 0x51554552ULL + static_cast<std::uint64_t>(step) * 131 + height));
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(height) * width, d);
  const double sx = static_cast<double>(params.region_width) / width;
  const double sy = static_cast<double>(params.region_height) / height;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto p = static_cast<Eigen::Index>(y) * width + x;
      const double rho = params.blob.radius_at((x + 0.5) * sx, (y + 0.5) * sy);
      const double signed_inside = std::clamp(1.0 - rho, -1.0, 1.0);
      q(p, 0) = sharpness * signed_inside;
      q(p, 1) = 1.0;
      for (int c = 2; c < d; ++c) q(p, c) = kNoiseFeature * rng.normal();
    }
  }
  return q;
}

Tensor4 synthetic_attention(const SyntheticSceneParams& params, int step, const LayerInfo& layer) {
  const int height = layer_extent(params.region_height, layer.resolution);
  const int width = layer_extent(params.region_width, layer.resolution);
  const Eigen::MatrixXd queries = synthetic_queries(params, step, height, width);
  std::vector<Eigen::MatrixXd> offsets;
  SplitMix64 rng(mix_seed(params.seed, 0x48454144ULL + static_cast<std::uint64_t>(step) * 977 + layer.id));
  for (int h = 0; h < params.heads; ++h) {
    Eigen::MatrixXd offset = Eigen::MatrixXd::Zero(queries.rows(), queries.cols());
    for (Eigen::Index p = 0; p < offset.rows(); ++p) offset(p, 0) = params.head_jitter * rng.normal();
    offsets.push_back(std::move(offset));
  }
  return softmax_attention(queries, params.keys, height, width, offsets);
}

std::vector<SyntheticSceneParams> SyntheticBackend::scene(const GenerationRequest& request) const {
  const auto& plan = request.plan;
  std::vector<SyntheticSceneParams> out;
  for (std::size_t i = 0; i < plan.regions.size(); ++i) {
    const auto& region = plan.regions[i];
    SplitMix64 rng(region_seed(request.seed, region.index));
    SyntheticSceneParams params;
    params.region_width = region.width;
    params.region_height = region.height;
    params.heads = options_.heads;
    params.projection_dim = options_.projection_dim;
    params.steps = request.steps;
    params.head_jitter = options_.head_jitter;
    params.seed = rng.next();

    // Keep the blob clear of every overlap strip so neighbours never cover it.
    const double margin_x = plan.spec.overlap_x + 8.0;
    const double margin_y = plan.spec.overlap_y + 8.0;
    const double avail_w = std::max(region.width - 2 * margin_x, 0.3 * region.width);
    const double avail_h = std::max(region.height - 2 * margin_y, 0.3 * region.height);
    auto& e = params.blob;
    e.rx = rng.uniform(0.25, 0.4) * avail_w;
    e.ry = rng.uniform(0.25, 0.4) * avail_h;
    e.angle = rng.uniform(0.0, std::numbers::pi);
    const double c = std::cos(e.angle);
    const double s = std::sin(e.angle);
    const double ext_x = std::sqrt(e.rx * e.rx * c * c + e.ry * e.ry * s * s);
    const double ext_y = std::sqrt(e.rx * e.rx * s * s + e.ry * e.ry * c * c);
    const double x0 = (region.width - avail_w) / 2.0;
    const double y0 = (region.height - avail_h) / 2.0;
    e.cx = x0 + rng.uniform(ext_x, std::max(ext_x, avail_w - ext_x));
    e.cy = y0 + rng.uniform(ext_y, std::max(ext_y, avail_h - ext_y));

    const auto tokens = tokenize(request.prompts[i].text);
    params.subject_tokens = subject_token_indices(tokens, request.prompts[i].subject);
    params.keys = synthetic_keys(static_cast<int>(tokens.size()), params.subject_tokens, options_.projection_dim, rng);
    out.push_back(std::move(params));
  }
  return out;
}

std::vector<MaskGrid> SyntheticBackend::oracle_masks(const GenerationRequest& request) const {
  const auto params = scene(request);
  std::vector<MaskGrid> masks;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& region = request.plan.regions[i];
    MaskGrid canvas = MaskGrid::Zero(request.plan.spec.height, request.plan.spec.width);
    canvas.block(region.y, region.x, region.height, region.width) =
        params[i].blob.rasterize(region.width, region.height);
    masks.push_back(std::move(canvas));
  }
  return masks;
}

GenerationResult SyntheticBackend::generate(const GenerationRequest& request) {
  request.validate();
  const auto& plan = request.plan;
  const auto params = scene(request);

  GenerationResult result;
  result.request = request;
  result.backend_id = id();
  result.image = RgbImage(plan.spec.width, plan.spec.height);

  std::vector<Rgb> backgrounds;
  std::vector<Rgb> foregrounds;
  for (const auto& region : plan.regions) {
    SplitMix64 rng(mix_seed(region_seed(request.seed, region.index), 0x434f4c4fULL));
    const Rgb bg = random_color(rng, 20, 235);
    Rgb fg = random_color(rng, 20, 235);
    while (std::abs(luma(fg) - luma(bg)) < 90.0) fg = random_color(rng, 20, 235);
    backgrounds.push_back(bg);
    foregrounds.push_back(fg);
  }
  const std::uint64_t noise_seed = mix_seed(request.seed, 0x4e4f495345ULL);
  // Backgrounds first (later regions own the overlap strips), then blobs.
  for (std::size_t i = 0; i < plan.regions.size(); ++i) {
    const auto& region = plan.regions[i];
    for (int y = region.y; y < region.y + region.height; ++y)
      for (int x = region.x; x < region.x + region.width; ++x) {
        auto* px = result.image.at(x, y);
        px[0] = clamp_byte(backgrounds[i].r + dither(noise_seed, x, y, 0));
        px[1] = clamp_byte(backgrounds[i].g + dither(noise_seed, x, y, 1));
        px[2] = clamp_byte(backgrounds[i].b + dither(noise_seed, x, y, 2));
      }
  }
  for (std::size_t i = 0; i < plan.regions.size(); ++i) {
    const auto& region = plan.regions[i];
    const MaskGrid blob = params[i].blob.rasterize(region.width, region.height);
    for (int y = 0; y < region.height; ++y)
      for (int x = 0; x < region.width; ++x) {
        if (!blob(y, x)) continue;
        const int cx = region.x + x;
        const int cy = region.y + y;
        auto* px = result.image.at(cx, cy);
        px[0] = clamp_byte(foregrounds[i].r + dither(noise_seed, cx, cy, 0));
        px[1] = clamp_byte(foregrounds[i].g + dither(noise_seed, cx, cy, 1));
        px[2] = clamp_byte(foregrounds[i].b + dither(noise_seed, cx, cy, 2));
      }
  }

  for (std::size_t i = 0; i < plan.regions.size(); ++i) {
    const auto tokens = tokenize(request.prompts[i].text);
    std::vector<std::string> words;
    for (const auto& t : tokens) words.push_back(t.text);
    result.token_map.tokens.push_back(std::move(words));
    result.token_map.subject.push_back(params[i].subject_tokens);

    AttentionStack stack;
    stack.region = plan.regions[i].index;
    stack.layers = options_.layers;
    for (int step = 0; step < request.steps; ++step) {
      for (const auto& layer : options_.layers) {
        Tensor4 tensor = synthetic_attention(params[i], step, layer);
        if (options_.dtype == DType::F16) tensor.quantize_to_half();
        stack.entries.emplace(AttentionKey{step, layer.id}, std::move(tensor));
      }
    }
    result.stacks.push_back(std::move(stack));
  }
  return result;
}

}  // namespace mosaic
