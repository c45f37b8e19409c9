#include <doctest.h>

#include "mosaic/maskgen.hpp"
#include "support.hpp"

using namespace mosaic;

namespace {

RegionMask as_region_mask(const MaskGrid& m) {
  RegionMask r;
  r.mask = m;
  return r;
}

/// Region-sized mask with exactly `count` set pixels forming one blob
/// (filled row by row from the top-left corner).
MaskGrid filled(int rows, int cols, long long count) {
  MaskGrid m = MaskGrid::Zero(rows, cols);
  for (long long i = 0; i < count; ++i) m(static_cast<int>(i / cols), static_cast<int>(i % cols)) = 1;
  return m;
}

FilterOutcome run_filter(const MaskGrid& m, const FilterPolicy& policy = {}) {
  const Region region{0, 0, static_cast<int>(m.cols()), static_cast<int>(m.rows()), 1};
  return filter(as_region_mask(m), components(m, policy.connectivity), policy, region);
}

}  // namespace

TEST_CASE("Otsu bins") {
  CHECK(otsu_bin(0.0) == 0);
  CHECK(otsu_bin(1.0 / 256) == 0);
  CHECK(otsu_bin(std::nextafter(1.0 / 256, 1.0)) == 1);
  CHECK(otsu_bin(0.5) == 127);
  CHECK(otsu_bin(1.0) == 255);
}

TEST_CASE("Otsu separates a bimodal map") {
  MapGrid m(4, 4);
  for (int i = 0; i < 16; ++i) m.data()[i] = i % 2 ? 0.9 : 0.1;
  const auto r = otsu(m);
  CHECK(r.threshold >= 0.1);
  CHECK(r.threshold < 0.9);
  for (int i = 0; i < 16; ++i) CHECK(r.coarse.mask.data()[i] == (i % 2 ? 1 : 0));
  CHECK(r.coarse.threshold_used == r.threshold);
  CHECK(r.coarse.stage == MaskStage::Coarse);
  // First maximum: every boundary between the two bins scores the same.
  CHECK(r.bin == otsu_bin(0.1));
}

TEST_CASE("Otsu matches exhaustive search on a seeded map") {
  SplitMix64 rng(11);
  const MapGrid m = testkit::random_map(rng, 16, 16);
  const auto r = otsu(m);
  const auto oracle = testkit::otsu_exhaustive(m);
  CHECK(r.bin == oracle.last_background_bin);
  CHECK(r.threshold == (oracle.last_background_bin + 1) / 256.0);
  CHECK((r.coarse.mask == oracle.mask).all());
  for (int i = 0; i < m.size(); ++i) CHECK((m.data()[i] > r.threshold) == static_cast<bool>(r.coarse.mask.data()[i]));
}

TEST_CASE("Otsu rejects constant maps") {
  try {
    otsu(MapGrid::Constant(4, 4, 0.3));
    FAIL("expected DegenerateMap");
  } catch (const MaskError& e) {
    CHECK(e.kind() == MaskErrc::DegenerateMap);
  }
  AggregatedMap flagged;
  flagged.values = MapGrid::Zero(3, 3);
  flagged.degenerate = true;
  CHECK_THROWS_AS(otsu(flagged), MaskError);
}

TEST_CASE("Otsu partition survives bin-preserving rescaling") {
  SplitMix64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    MapGrid m(12, 12);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = (static_cast<double>(rng.uniform_int(0, 255)) + 0.5) / 256.0;
    // Shifting every value within its bin keeps the assignment.
    MapGrid shifted = m + 0.25 / 256.0;
    CHECK((otsu(m).coarse.mask == otsu(shifted).coarse.mask).all());
  }
}

TEST_CASE("components on small examples") {
  MaskGrid blocks = MaskGrid::Zero(6, 6);
  blocks.block(0, 0, 2, 2).setOnes();
  blocks.block(3, 3, 2, 2).setOnes();
  const auto c = components(blocks, 8);
  CHECK(c.count() == 2);
  CHECK(c.areas == std::vector<long long>{4, 4});
  CHECK(c.labels(0, 0) == 1);
  CHECK(c.labels(4, 4) == 2);

  MaskGrid diag = MaskGrid::Zero(3, 3);
  diag(0, 0) = diag(1, 1) = 1;
  CHECK(components(diag, 8).count() == 1);
  CHECK(components(diag, 4).count() == 2);
  CHECK(components(MaskGrid::Zero(4, 4)).count() == 0);
}

TEST_CASE("components agree with flood fill") {
  SplitMix64 rng(21);
  for (int trial = 0; trial < 60; ++trial) {
    const MaskGrid m = testkit::random_mask(rng, 20, 20, rng.uniform(0.2, 0.7));
    for (int conn : {4, 8}) {
      int count = 0;
      const auto oracle = testkit::flood_fill_labels(m, conn, &count);
      const auto mine = components(m, conn);
      CHECK(mine.count() == count);
      CHECK(testkit::same_partition(mine.labels, oracle));
      // Raster-order labeling means the partitions are equal as labels too.
      CHECK((mine.labels == oracle).all());
      long long total = 0;
      for (auto a : mine.areas) total += a;
      CHECK(total == m.cast<long long>().sum());
    }
  }
}

TEST_CASE("filter follows the strict interval") {
  // 1000-pixel region: 50 pixels is exactly 5%.
  CHECK(run_filter(filled(20, 50, 40)).reason == RejectReason::TooSmall);
  CHECK(run_filter(filled(20, 50, 50)).reason == RejectReason::TooSmall);
  CHECK(run_filter(filled(20, 50, 51)).accepted.has_value());
  CHECK(run_filter(filled(20, 50, 500)).accepted.has_value());
  CHECK(run_filter(filled(20, 50, 949)).accepted.has_value());
  CHECK(run_filter(filled(20, 50, 950)).reason == RejectReason::TooLarge);
  CHECK(run_filter(filled(20, 50, 1000)).reason == RejectReason::TooLarge);

  MaskGrid two = MaskGrid::Zero(20, 50);
  two.block(0, 0, 20, 10).setOnes();
  two.block(0, 30, 20, 10).setOnes();
  const auto out = run_filter(two);
  CHECK(out.reason == RejectReason::Fragmented);
  CHECK(out.component_count == 2);
  CHECK(out.area_fraction == doctest::Approx(0.4));

  // Area is checked first: a tiny fragmented mask reports TooSmall.
  MaskGrid specks = MaskGrid::Zero(20, 50);
  specks(0, 0) = specks(10, 10) = 1;
  CHECK(run_filter(specks).reason == RejectReason::TooSmall);
}

TEST_CASE("widening the interval never rejects an accepted mask") {
  SplitMix64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const MaskGrid m = filled(10, 10, rng.uniform_int(0, 100));
    FilterPolicy narrow;
    narrow.min_area_fraction = rng.uniform(0.05, 0.4);
    narrow.max_area_fraction = rng.uniform(0.6, 0.95);
    FilterPolicy wide = narrow;
    wide.min_area_fraction *= rng.uniform(0.1, 1.0);
    wide.max_area_fraction += (1.0 - wide.max_area_fraction) * rng.uniform(0.0, 0.9);
    if (run_filter(m, narrow).accepted) CHECK(run_filter(m, wide).accepted.has_value());
  }
}

TEST_CASE("filter policy validation") {
  CHECK_THROWS_AS((FilterPolicy{0.5, 0.4, 1, 8}.validate()), MaskError);
  CHECK_THROWS_AS((FilterPolicy{0.0, 0.4, 1, 8}.validate()), MaskError);
  CHECK_THROWS_AS((FilterPolicy{0.05, 0.95, 1, 6}.validate()), MaskError);
  CHECK(reject_reason_from_string(to_string(RejectReason::Fragmented)) == RejectReason::Fragmented);
}

TEST_CASE("expand translates into the canvas") {
  const CanvasSpec canvas;
  const Region region{480, 360, 544, 408, 4};
  MaskGrid m = MaskGrid::Zero(408, 544);
  m(0, 0) = 1;
  const auto inst = expand(as_region_mask(m), region, canvas, 7);
  CHECK(inst.mask.rows() == 768);
  CHECK(inst.mask.cols() == 1024);
  CHECK(inst.area == 1);
  CHECK(inst.mask(360, 480) == 1);
  CHECK(inst.mask.cast<int>().sum() == 1);
  CHECK(inst.bbox == BoundingBox{480, 360, 1, 1});
  CHECK(inst.category_id == 7);
  CHECK(inst.region == 4);

  const auto full = expand(as_region_mask(MaskGrid::Ones(408, 544)), region, canvas, 7);
  CHECK(full.bbox == BoundingBox{480, 360, 544, 408});
  CHECK(full.area == region.area());
}

TEST_CASE("expand preserves area and position") {
  SplitMix64 rng(5);
  const CanvasSpec canvas{256, 192, 4, 0.375, 32, 32, 8};
  for (int trial = 0; trial < 30; ++trial) {
    const Region region{8 * static_cast<int>(rng.uniform_int(0, 10)), 8 * static_cast<int>(rng.uniform_int(0, 8)), 64, 48, 1};
    const MaskGrid m = testkit::random_mask(rng, 48, 64, 0.3);
    const auto inst = expand(as_region_mask(m), region, canvas, 1);
    CHECK(inst.area == m.cast<long long>().sum());
    CHECK(inst.mask.cast<long long>().sum() == inst.area);
    CHECK((inst.mask.block(region.y, region.x, 48, 64) == m).all());
    CHECK(tight_bbox(inst.mask) == inst.bbox);
  }
}

TEST_CASE("boundary distance equals brute force") {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const MaskGrid m = testkit::random_mask(rng, 17, 23, 0.1);
    const MapGrid fast = boundary_distance(m);
    const MapGrid slow = testkit::distance_brute(m);
    CHECK((fast - slow).abs().maxCoeff() < 1e-9);
  }
  CHECK(std::isinf(boundary_distance(MaskGrid::Ones(4, 4))(0, 0)));
}

TEST_CASE("refinement snaps a dilated mask to a hard edge") {
  const auto fx = testkit::ellipse_fixture(160, 120);
  const MaskGrid coarse = testkit::dilate(fx.truth, 3);
  RefineReport report;
  const auto refined = refine(as_region_mask(coarse), fx.image, {}, &report);
  const double before = testkit::mask_iou(coarse, fx.truth);
  const double after = testkit::mask_iou(refined.mask, fx.truth);
  CHECK(after > before);
  CHECK(after >= 0.9);
  CHECK(refined.stage == MaskStage::Refined);
  CHECK(report.final_residual <= report.initial_residual);
  CHECK(report.free_pixels > 0);
}

TEST_CASE("refinement on a flat image stays close to the coarse mask") {
  const auto fx = testkit::ellipse_fixture(512, 384);
  const auto flat = testkit::constant_image(512, 384, 128, 128, 128);
  const auto refined = refine(as_region_mask(fx.truth), flat);
  CHECK(testkit::mask_iou(refined.mask, fx.truth) >= 0.95);
}

TEST_CASE("refinement with a vanishing smoothness weight returns the coarse mask") {
  SplitMix64 rng(2);
  const auto fx = testkit::ellipse_fixture(96, 64);
  const MaskGrid coarse = testkit::dilate(fx.truth, 4);
  BilateralParams params;
  params.lambda = 1e-9;
  const auto refined = refine(as_region_mask(coarse), fx.image, params);
  CHECK((refined.mask == coarse).all());
}

TEST_CASE("refined output stays binary and inside the band") {
  const auto fx = testkit::ellipse_fixture(128, 96);
  SplitMix64 rng(6);
  const MaskGrid coarse = testkit::random_mask(rng, 96, 128, 0.5);
  BilateralParams params;
  const auto refined = refine(as_region_mask(coarse), fx.image, params);
  const MapGrid d = boundary_distance(coarse);
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 128; ++x) {
      CHECK(refined.mask(y, x) <= 1);
      if (d(y, x) >= params.spatial_sigma) CHECK(refined.mask(y, x) == coarse(y, x));
    }
  CHECK_THROWS_AS(refine(as_region_mask(coarse), testkit::constant_image(10, 10, 0, 0, 0)), MaskError);
  BilateralParams bad;
  bad.lambda = -1;
  CHECK_THROWS_AS(refine(as_region_mask(coarse), fx.image, bad), MaskError);
}
