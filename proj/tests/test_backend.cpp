#include <doctest.h>

#include <zlib.h>

#include <fstream>

#include "mosaic/attention.hpp"
#include "mosaic/half.hpp"
#include "mosaic/mfat.hpp"
#include "mosaic/synthetic.hpp"
#include "support.hpp"

using namespace mosaic;

namespace {

std::uint32_t crc_of(const std::vector<std::uint8_t>& bytes) {
  return static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

double max_row_error(const Tensor4& t) {
  double worst = 0.0;
  for (int h = 0; h < t.heads; ++h)
    for (int y = 0; y < t.height; ++y)
      for (int x = 0; x < t.width; ++x) {
        double sum = 0.0;
        for (int k = 0; k < t.tokens; ++k) sum += t(h, y, x, k);
        worst = std::max(worst, std::abs(sum - 1.0));
      }
  return worst;
}

GenerationRequest single_request(std::uint64_t seed, int steps = 4) {
  return testkit::make_request(CanvasSpec{512, 384, 1, 0.375, 64, 48, 8}, {256, 192}, SplitAxis::None, {"easel"}, seed,
                               steps);
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("binary16 conversion") {
  CHECK(half_to_float(float_to_half(1.0f)) == 1.0f);
  CHECK(float_to_half(1.0f) == 0x3C00);
  CHECK(float_to_half(-2.0f) == 0xC000);
  CHECK(float_to_half(65504.0f) == 0x7BFF);
  CHECK(float_to_half(1e6f) == 0x7C00);
  CHECK(half_to_float(0x0001) == std::ldexp(1.0f, -24));
  // 1 + 2^-11 sits halfway between 1 and 1 + 2^-10: ties go to even.
  CHECK(float_to_half(1.0f + std::ldexp(1.0f, -11)) == 0x3C00);
  CHECK(float_to_half(1.0f + 3 * std::ldexp(1.0f, -11)) == 0x3C02);
  for (std::uint32_t bits = 0; bits < 0x7C00; ++bits)
    CHECK_MESSAGE(float_to_half(half_to_float(static_cast<std::uint16_t>(bits))) == bits, bits);
}

TEST_CASE("softmax of zero logits is uniform") {
  const Eigen::MatrixXd q = Eigen::MatrixXd::Zero(6, 1);
  const Eigen::MatrixXd k = Eigen::MatrixXd::Zero(4, 1);
  const Tensor4 t = softmax_attention(q, k, 2, 3);
  for (float v : t.values) CHECK(v == doctest::Approx(0.25).epsilon(1e-7));
}

TEST_CASE("softmax of a single strong logit") {
  Eigen::MatrixXd q(1, 1);
  q << 1.0;
  Eigen::MatrixXd k(2, 1);
  k << 10.0, 0.0;
  const Tensor4 t = softmax_attention(q, k, 1, 1);
  const double expect = 1.0 / (1.0 + std::exp(-10.0));  // 0.9999546
  CHECK(t(0, 0, 0, 0) == doctest::Approx(expect).epsilon(1e-7));
  CHECK(t(0, 0, 0, 1) == doctest::Approx(1.0 - expect).epsilon(1e-4));
  CHECK_THROWS_AS(softmax_attention(Eigen::MatrixXd::Zero(3, 2), k, 1, 3), BackendError);
}

TEST_CASE("subject mass concentrates on a left-half blob") {
  SplitMix64 rng(9);
  SyntheticSceneParams p;
  p.region_width = 128;
  p.region_height = 128;
  p.blob = Ellipse{32.0, 64.0, 30.0, 60.0, 0.0};
  p.subject_tokens = {2};
  p.keys = synthetic_keys(5, p.subject_tokens, p.projection_dim, rng);
  p.steps = 10;
  const Tensor4 t = synthetic_attention(p, 9, LayerInfo{0, 8});
  double inside = 0.0, outside = 0.0;
  int n_in = 0, n_out = 0;
  for (int y = 0; y < t.height; ++y)
    for (int x = 0; x < t.width; ++x) {
      const double v = 0.5 * (t(0, y, x, 2) + t(1, y, x, 2));
      if (p.blob.contains((x + 0.5) * 8, (y + 0.5) * 8)) {
        inside += v;
        ++n_in;
      } else {
        outside += v;
        ++n_out;
      }
    }
  CHECK(inside / n_in > outside / n_out);
  CHECK(max_row_error(t) < 1e-6);
}

TEST_CASE("synthetic single-object fixture") {
  SyntheticBackend backend;
  const auto result = generate(single_request(3), backend);
  CHECK(result.image.width == 512);
  CHECK(result.image.height == 384);
  REQUIRE(result.stacks.size() == 1);
  CHECK(result.stacks[0].entries.size() == 4 * 6);
  for (const auto& [key, tensor] : result.stacks[0].entries) {
    CHECK(tensor.dtype == DType::F16);
    CHECK(max_row_error(tensor) < kRowSumTolerance);
  }
  const auto& fine = result.stacks[0].entries.at({0, 0});
  CHECK(fine.height == 48);
  CHECK(fine.width == 64);
  const auto& coarse = result.stacks[0].entries.at({0, 2});
  CHECK(coarse.height == 12);
  CHECK(coarse.width == 16);

  CHECK(crc_of(result.image.pixels) == 0xc88971c0u);
  CHECK(result.stacks[0].entries.at({3, 0})(1, 24, 32, result.token_map.subject[0][0]) == 0.996582031f);

  const auto oracle = backend.oracle_masks(result.request);
  REQUIRE(oracle.size() == 1);
  const long long blob = oracle[0].cast<long long>().sum();
  CHECK(blob == 30914);
}

TEST_CASE("synthetic backend is deterministic") {
  SyntheticBackend backend;
  const auto request = testkit::make_request(CanvasSpec{}, {512, 384}, SplitAxis::None,
                                             {"easel", "seaplane", "parrot", "aerosol can"}, 11, 3);
  CHECK(generate(request, backend) == generate(request, backend));
}

TEST_CASE("thresholding normalized synthetic attention recovers the ellipse") {
  SyntheticBackend backend;
  const auto request = testkit::make_request(CanvasSpec{}, {512, 384}, SplitAxis::None,
                                             {"easel", "seaplane", "parrot", "aerosol can"}, 21, 10);
  const auto result = generate(request, backend);
  const auto params = backend.scene(request);
  for (std::size_t i = 0; i < request.plan.regions.size(); ++i) {
    const auto& region = request.plan.regions[i];
    const auto map = aggregate(result.stacks[i], result.token_map.subject[i], region);
    MaskGrid level = (map.values > 0.5).cast<std::uint8_t>();
    CHECK(testkit::mask_iou(level, params[i].blob.rasterize(region.width, region.height)) >= 0.9);
  }
}

TEST_CASE("request validation and file backend failures") {
  GenerationRequest r = single_request(1);
  r.steps = 0;
  CHECK_THROWS_AS(r.validate(), BackendError);
  r = single_request(1);
  r.guidance_scale = 0.0;
  CHECK_THROWS_AS(r.validate(), BackendError);
  r = single_request(1);
  r.prompts.clear();
  CHECK_THROWS_AS(r.validate(), BackendError);

  MfatFileBackend missing("/nonexistent/none.mfat");
  try {
    generate(single_request(1), missing);
    FAIL("expected BackendFailure");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendErrc::BackendFailure);
    CHECK(std::string(e.what()).find("mfat:none.mfat") != std::string::npos);
  }
}

TEST_CASE("ingest rejects rows that do not sum to one") {
  SyntheticBackend backend;
  auto result = generate(single_request(5, 1), backend);
  result.stacks[0].entries.begin()->second.values[0] += 0.01f;
  CHECK_THROWS_AS(validate_result(result), BackendError);
  result = generate(single_request(5, 1), backend);
  result.stacks[0].entries.begin()->second.width -= 1;
  CHECK_THROWS_AS(validate_result(result), BackendError);
}

TEST_CASE("MFAT round trip through files") {
  const auto dir = testkit::fresh_dir("mfat");
  SyntheticBackend backend;
  const auto result = generate(single_request(3, 2), backend);
  write_mfat(result, dir / "c.mfat");
  CHECK(std::filesystem::exists(dir / "c.png"));
  CHECK(read_mfat(dir / "c.mfat") == result);

  MfatFileBackend file(dir / "c.mfat");
  CHECK(generate(result.request, file) == result);

  const auto bytes = read_bytes(dir / "c.mfat");
  CHECK(std::equal(bytes.begin(), bytes.begin() + 5, kMfatMagic));
  const std::uint32_t header = bytes[5] | (bytes[6] << 8) | (bytes[7] << 16) | (static_cast<std::uint32_t>(bytes[8]) << 24);
  const auto decoded = decode_mfat(bytes);
  CHECK(decoded.image_ref == "c.png");
  CHECK(header > 0);
}

TEST_CASE("MFAT round trip of f32 tensors") {
  SyntheticOptions options;
  options.dtype = DType::F32;
  SyntheticBackend backend(options);
  const auto result = generate(single_request(4, 2), backend);
  const auto bytes = encode_mfat(result, "x.png");
  auto decoded = decode_mfat(bytes);
  decoded.result.image = result.image;
  CHECK(decoded.result == result);
}

TEST_CASE("MFAT corruption is detected") {
  SyntheticBackend backend;
  const auto result = generate(single_request(3, 1), backend);
  const auto bytes = encode_mfat(result, "c.png");

  auto expect = [](std::vector<std::uint8_t> data, MfatErrc kind) {
    try {
      decode_mfat(data);
      FAIL("expected an MFAT error");
    } catch (const MfatError& e) {
      CHECK(e.kind() == kind);
    }
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  expect(bad_magic, MfatErrc::BadMagic);
  auto version = bytes;
  version[4] = 2;
  expect(version, MfatErrc::VersionUnsupported);
  expect(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 100), MfatErrc::CorruptIndex);
  expect(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 3), MfatErrc::BadMagic);
  expect(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 1), MfatErrc::CorruptIndex);
  auto padded = bytes;
  padded.push_back(0);
  expect(padded, MfatErrc::CorruptIndex);
  auto flipped = bytes;
  flipped[flipped.size() - 7] ^= 0x40;
  expect(flipped, MfatErrc::ChecksumMismatch);

  const auto dir = testkit::fresh_dir("mfat-corrupt");
  write_mfat(result, dir / "c.mfat");
  write_bytes(dir / "c.mfat", flipped);
  CHECK_THROWS_AS(read_mfat(dir / "c.mfat"), MfatError);
}
