#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "sevq/errors.hpp"
#include "sevq/lung_geometry.hpp"
#include "sevq/png_io.hpp"
#include "sevq/synthetic.hpp"
#include "test_support.hpp"

using namespace sevq;

namespace {

void fill_rect(LungMask& m, int r0, int c0, int r1, int c1) {
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) m(r, c) = 1;
}

LungMask two_lobes(int side = 64) {
  LungMask m(side, side, 0);
  testing::fill_ellipse(m, side * 0.5, side * 0.27, side * 0.35, side * 0.14);
  testing::fill_ellipse(m, side * 0.5, side * 0.73, side * 0.35, side * 0.14);
  return m;
}

LungMask shift(const LungMask& m, int dr, int dc) {
  LungMask out(m.rows(), m.cols(), 0);
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c)
      if (m(r, c)) out(r + dr, c + dc) = 1;
  return out;
}

}  // namespace

TEST_CASE("connected components: rectangles, blob, diagonal contact") {
  LungMask m(20, 20, 0);
  fill_rect(m, 2, 2, 10, 6);
  fill_rect(m, 2, 12, 12, 17);
  auto cc = connected_components(m);
  REQUIRE(cc.components.size() == 2);
  CHECK(cc.components[0].area == 66);  // 11 x 6
  CHECK(cc.components[1].area == 45);  // 9 x 5
  CHECK(cc.components[1].centroid_row == doctest::Approx(6.0));
  CHECK(cc.components[1].centroid_col == doctest::Approx(4.0));

  LungMask blob(10, 10, 0);
  testing::fill_ellipse(blob, 5, 5, 3, 3);
  CHECK(connected_components(blob).components.size() == 1);

  // 4x4 grid: two 2x2 squares touching only at a corner. Neighbour graph by
  // hand: (1,1)-(2,2) share no edge, so the squares are separate.
  LungMask diag(4, 4, 0);
  fill_rect(diag, 0, 0, 1, 1);
  fill_rect(diag, 2, 2, 3, 3);
  CHECK(connected_components(diag).components.size() == 2);

  CHECK_THROWS_AS(connected_components(LungMask(5, 5, 0)), GeometryError);
}

TEST_CASE("split_left_right assigns lobes by centroid column and swaps under mirroring") {
  const auto m = two_lobes();
  const auto split = split_left_right(m);
  CHECK_FALSE(split.median_fallback);
  CHECK(split.right(32, 17) == 1);  // image-left lobe is patient-right
  CHECK(split.left(32, 46) == 1);
  CHECK(split.right(32, 46) == 0);

  LungMask mirrored(m.rows(), m.cols(), 0);
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) mirrored(r, m.cols() - 1 - c) = m(r, c);
  const auto ms = split_left_right(mirrored);
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) {
      REQUIRE(ms.right(r, m.cols() - 1 - c) == split.left(r, c));
      REQUIRE(ms.left(r, m.cols() - 1 - c) == split.right(r, c));
    }
}

TEST_CASE("extra components merge into the nearer lobe") {
  auto m = two_lobes();
  fill_rect(m, 4, 22, 6, 24);  // 9-pixel speck above the image-left lobe
  const auto split = split_left_right(m);
  CHECK(split.right(5, 23) == 1);
  const auto areas = build_region_partition(m).region_areas();
  const auto regions = oracle::classify_regions(m);
  REQUIRE(regions.has_value());
  std::array<std::size_t, 6> expected{};
  for (auto v : regions->values())
    if (v != 255) ++expected[v];
  CHECK(areas == expected);
}

TEST_CASE("single component falls back to the median column split") {
  LungMask m(30, 30, 0);
  fill_rect(m, 5, 5, 24, 24);
  const auto split = split_left_right(m);
  CHECK(split.median_fallback);
  CHECK(count_nonzero(split.right) == 20 * 10);
  CHECK(count_nonzero(split.left) == 20 * 10);
  CHECK(split.right(10, 14) == 1);
  CHECK(split.left(10, 15) == 1);
  CHECK(build_region_partition(m).median_fallback());
}

TEST_CASE("split rows at 5/12 and 2/3 of the extent") {
  CHECK(split_rows_for_extent(0, 120) == SplitRows{0, 120, 50, 80});
  CHECK(split_rows_for_extent(10, 130) == SplitRows{10, 130, 60, 90});
  CHECK(split_rows_for_extent(0, 11) == SplitRows{0, 11, 4, 7});
  CHECK_THROWS_AS(split_rows_for_extent(5, 5), GeometryError);

  LungMask m(140, 20, 0);
  fill_rect(m, 10, 3, 130, 5);
  const auto rows = compute_split_rows(m);
  CHECK(rows.r1 == 60);
  CHECK(rows.r2 == 90);
  CHECK(band_for_row(rows, 59) == Band::kUpper);
  CHECK(band_for_row(rows, 60) == Band::kMiddle);
  CHECK(band_for_row(rows, 89) == Band::kMiddle);
  CHECK(band_for_row(rows, 90) == Band::kLower);

  LungMask flat(10, 10, 0);
  fill_rect(flat, 4, 1, 4, 8);
  CHECK_THROWS_AS(compute_split_rows(flat), GeometryError);
  CHECK_THROWS_AS(build_region_partition(flat), GeometryError);
}

TEST_CASE("split rows are ordered for every extent") {
  for (int top = 0; top < 20; ++top)
    for (int bottom = top + 1; bottom < 300; ++bottom) {
      const auto s = split_rows_for_extent(top, bottom);
      REQUIRE(top <= s.r1);
      REQUIRE(s.r1 <= s.r2);
      REQUIRE(s.r2 <= bottom);
    }
}

TEST_CASE("split rows: horizontal translation invariance, vertical equivariance") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = testing::random_mask(rng, 48);
    LungMask big(64, 64, 0);
    for (int r = 0; r < 48; ++r)
      for (int c = 0; c < 48; ++c) big(r, c) = m(r, c);
    const auto base = compute_split_rows(big);
    std::uniform_int_distribution<int> k(0, 15);
    const int dc = k(rng);
    const int dr = k(rng);
    CHECK(compute_split_rows(shift(big, 0, dc)) == base);
    const auto moved = compute_split_rows(shift(big, dr, 0));
    CHECK(moved == SplitRows{base.top + dr, base.bottom + dr, base.r1 + dr, base.r2 + dr});
  }
}

TEST_CASE("region partition matches brute-force classification") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = testing::random_mask(rng, 40 + trial % 25);
    const auto expected = oracle::classify_regions(m);
    REQUIRE(expected.has_value());
    const auto p = build_region_partition(m);
    REQUIRE(p.index() == *expected);
    for (std::size_t i = 0; i < m.size(); ++i) REQUIRE((m[i] == 0) == (p.index()[i] == RegionPartition::kBackground));
  }
}

TEST_CASE("canonical partition: image-left upper pixel is (upper, patient-right)") {
  const auto m = two_lobes();
  const auto p = build_region_partition(m);
  const auto rows = p.split_rows(Side::kPatientRight);
  CHECK(p.at(rows.top + 1, 17) == region_index(Band::kUpper, Side::kPatientRight));
  CHECK(p.at(0, 0) == RegionPartition::kBackground);
  for (auto a : p.region_areas()) CHECK(a > 0);
}

TEST_CASE("per-lung split mode uses each lobe's own extent") {
  LungMask m(100, 60, 0);
  fill_rect(m, 10, 5, 70, 20);   // image-left lobe, rows 10..70
  fill_rect(m, 40, 35, 95, 50);  // image-right lobe, rows 40..95
  const auto global = build_region_partition(m, SplitMode::kGlobal);
  const auto per = build_region_partition(m, SplitMode::kPerLung);
  CHECK(global.split_rows(Side::kPatientRight) == split_rows_for_extent(10, 95));
  CHECK(per.split_rows(Side::kPatientRight) == split_rows_for_extent(10, 70));
  CHECK(per.split_rows(Side::kPatientLeft) == split_rows_for_extent(40, 95));
  CHECK(per.at(50, 40) == region_index(Band::kUpper, Side::kPatientLeft));
  CHECK(global.at(50, 40) == region_index(Band::kMiddle, Side::kPatientLeft));
}

TEST_CASE("roi max pool examples") {
  const auto m = two_lobes();
  const auto p = build_region_partition(m);
  ProbabilityMap zero(64, 64, 0.0);
  CHECK(roi_max_pool(zero, p).array.values == std::array<double, 6>{});

  const auto rows = p.split_rows(Side::kPatientRight);
  ProbabilityMap one(64, 64, 0.0);
  one(rows.top + 2, 17) = 0.9;
  const auto pooled = roi_max_pool(one, p);
  CHECK(pooled.array.values == std::array<double, 6>{0.9, 0, 0, 0, 0, 0});
  CHECK(pooled.argmax[0] == (rows.top + 2) * 64 + 17);

  ProbabilityMap inside(64, 64, 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) inside[i] = m[i];
  const auto ones = roi_max_pool(inside, p);
  CHECK(ones.array.values == std::array<double, 6>{1, 1, 1, 1, 1, 1});
  for (bool e : ones.empty) CHECK_FALSE(e);

  CHECK_THROWS_AS(roi_max_pool(ProbabilityMap(32, 32, 0.0), p), ValidationError);
}

TEST_CASE("empty regions pool to zero with a flag") {
  const auto bg = RegionPartition::background(16, 16);
  ProbabilityMap map(16, 16, 0.7);
  const auto pooled = roi_max_pool(map, bg);
  for (int k = 0; k < 6; ++k) {
    CHECK(pooled.empty[static_cast<std::size_t>(k)]);
    CHECK(pooled.argmax[static_cast<std::size_t>(k)] == -1);
    CHECK(pooled.array.values[static_cast<std::size_t>(k)] == 0.0);
  }
}

TEST_CASE("ties resolve to the first row-major maximizer") {
  const auto m = two_lobes(32);
  const auto p = build_region_partition(m);
  ProbabilityMap map(32, 32, 0.5);
  const auto pooled = roi_max_pool(map, p);
  for (int k = 0; k < 6; ++k) {
    std::ptrdiff_t first = -1;
    for (std::size_t i = 0; i < map.size() && first < 0; ++i)
      if (p.index()[i] == k) first = static_cast<std::ptrdiff_t>(i);
    CHECK(pooled.argmax[static_cast<std::size_t>(k)] == first);
  }
}

TEST_CASE("roi max pool equals the exhaustive oracle on random inputs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const auto m = testing::random_mask(rng, 48);
    const auto map = testing::random_map(rng, 48, 48, trial % 2 == 0);
    const auto regions = oracle::classify_regions(m);
    const auto pooled = roi_max_pool(map, build_region_partition(m));
    REQUIRE(pooled.array.values == oracle::region_max(map, *regions));
    for (double v : pooled.array.values) REQUIRE((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("raising one pixel never lowers a pooled entry") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> pix(0, 48 * 48 - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = testing::random_mask(rng, 48);
    const auto p = build_region_partition(m);
    auto map = testing::random_map(rng, 48, 48);
    const auto before = roi_max_pool(map, p).array.values;
    auto& v = map[static_cast<std::size_t>(pix(rng))];
    v += (1.0 - v) * u(rng);
    const auto after = roi_max_pool(map, p).array.values;
    for (std::size_t k = 0; k < 6; ++k) REQUIRE(after[k] >= before[k]);
  }
}

TEST_CASE("pooling gradient matches finite differences at non-tied points") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = testing::random_mask(rng, 24);
    const auto p = build_region_partition(m);
    auto map = testing::random_map(rng, 24, 24);
    std::array<double, 6> upstream{};
    for (auto& g : upstream) g = n(rng);
    auto objective = [&] {
      const auto a = roi_max_pool(map, p).array.values;
      double s = 0.0;
      for (std::size_t k = 0; k < 6; ++k) s += upstream[k] * a[k];
      return s;
    };
    const auto pooled = roi_max_pool(map, p);
    const auto grad = roi_max_pool_backward(pooled, upstream, 24, 24);
    for (std::size_t i = 0; i < map.size(); ++i) {
      const double fd = oracle::central_difference(objective, map[i], 1e-7);
      REQUIRE(std::abs(fd - grad[i]) < 1e-4);
    }
  }
}

TEST_CASE("partition exports as an 8-bit indexed PNG") {
  testing::TempDir dir("partition");
  const auto p = build_region_partition(two_lobes());
  write_png_gray8(dir / "p.png", p.index());
  const auto back = read_png_gray8(dir / "p.png");
  CHECK(back == p.index());
  for (auto v : back.values()) REQUIRE((v <= 5 || v == 255));
}
