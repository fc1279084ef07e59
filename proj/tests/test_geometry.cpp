#include <catch2/catch_amalgamated.hpp>

#include "boxmil/geometry.hpp"
#include "test_support.hpp"

using namespace boxmil;
using testsup::rand_array;
using testsup::random_box;

TEST_CASE("box_mask counts and bounds", "[geometry]") {
  CHECK(geom::box_mask({0, 0, 2, 2, 1}, 4, 4).sum() == 9.0);
  CHECK(geom::box_mask({0, 0, 3, 3, 1}, 4, 4).sum() == 16.0);  // full image
  Array single = geom::box_mask({1, 1, 1, 1, 1}, 4, 4);
  CHECK(single.sum() == 1.0);
  CHECK(single.at(1, 1) == 1.0);
  CHECK_THROWS_AS(geom::box_mask({2, 2, 5, 5, 1}, 4, 4), std::out_of_range);
}

TEST_CASE("crop_with_margin arithmetic and clamping", "[geometry]") {
  SECTION("margin 0 is the box extent") {
    auto r = geom::crop_with_margin({3, 4, 6, 9, 1}, 20, 20, 0);
    CHECK(r.x0 == 3);
    CHECK(r.y0 == 4);
    CHECK(r.w == 4);
    CHECK(r.h == 6);
  }
  SECTION("interior margin") {
    auto r = geom::crop_with_margin({5, 5, 9, 9, 1}, 20, 20, 2);
    CHECK(r.y0 == 3);
    CHECK(r.x0 == 3);
    CHECK(r.h == 9);  // rows 3..11
    CHECK(r.w == 9);
  }
  SECTION("clamped at the corner") {
    auto r = geom::crop_with_margin({0, 0, 4, 4, 1}, 20, 20, 3);
    CHECK(r.y0 == 0);
    CHECK(r.x0 == 0);
    CHECK(r.h == 8);
    CHECK(r.w == 8);
  }
}

TEST_CASE("rotation fixed points and constants", "[geometry]") {
  SECTION("zero angle is the identity") {
    Rng rng(3);
    Array region = rand_array({7, 9}, rng, 0, 1);
    Array rot = geom::rotate_region(region, 0.0);
    REQUIRE(rot.shape() == region.shape());
    for (int64_t i = 0; i < region.numel(); ++i) CHECK(rot[i] == Catch::Approx(region[i]));
  }
  SECTION("center delta survives any rotation") {
    Array region({9, 9});
    region.at(4, 4) = 1.0;
    for (double theta : {-70.0, -25.0, 10.0, 45.0, 80.0}) {
      Array rot = geom::rotate_region(region, theta);
      CHECK(rot.at(rot.dim(0) / 2, rot.dim(1) / 2) >= 0.999);
    }
  }
  SECTION("constant region stays constant in the interior") {
    Array region({12, 16}, 1.0);
    Array rot = geom::rotate_region(region, 25.0);
    // interior = points whose source lands >= 2 px inside the region
    ResamplePlan plan = geom::rotation_plan(12, 16, 25.0);
    for (int y = 0; y < plan.out_h; ++y)
      for (int x = 0; x < plan.out_w; ++x) {
        const size_t k = static_cast<size_t>(y) * plan.out_w + x;
        const double sy = plan.src_y[k], sx = plan.src_x[k];
        if (sy >= 2 && sy <= 9 && sx >= 2 && sx <= 13)
          CHECK(rot.at(y, x) == Catch::Approx(1.0).margin(1e-6));
      }
  }
  SECTION("angle domain enforced") {
    Array region({4, 4}, 1.0);
    CHECK_THROWS_AS(geom::rotate_region(region, 90.0), std::invalid_argument);
    CHECK_THROWS_AS(geom::rotate_region(region, -95.0), std::invalid_argument);
  }
}

TEST_CASE("rotate there and back restores the interior", "[geometry]") {
  // a smooth field: two bilinear passes low-pass the signal, so the property
  // is stated for slowly varying content
  Rng rng(8);
  Array region({14, 14});
  for (int y = 0; y < 14; ++y)
    for (int x = 0; x < 14; ++x)
      region.at(y, x) = 0.5 + 0.4 * std::sin(x / 5.0) * std::cos(y / 6.0);
  for (int trial = 0; trial < 10; ++trial) {
    const double theta = rng.uniform(-60, 60);
    Array once = geom::rotate_region(region, theta);
    Array back = geom::rotate_region(once, -theta);
    const int oy = (back.dim(0) - region.dim(0)) / 2;
    const int ox = (back.dim(1) - region.dim(1)) / 2;
    for (int y = 3; y < region.dim(0) - 3; ++y)
      for (int x = 3; x < region.dim(1) - 3; ++x)
        CHECK(std::abs(back.at(oy + y, ox + x) - region.at(y, x)) < 1e-2);
  }
}

TEST_CASE("polar transform basics", "[geometry]") {
  geom::PolarSpec spec;
  spec.grid = {8, 12};
  SECTION("row zero is the origin value for every column") {
    Rng rng(5);
    Array region = rand_array({11, 11}, rng, 0, 1);
    spec.origin_y = 6;
    spec.origin_x = 4;
    spec.radius = 4.0;
    Array polar = geom::polar_transform(region, spec);
    for (int j = 0; j < 12; ++j)
      CHECK(polar.at(0, j) == Catch::Approx(region.at(6, 4)));
  }
  SECTION("constant region samples to ones inside the support") {
    Array region({15, 15}, 1.0);
    spec.origin_y = 7;
    spec.origin_x = 7;
    spec.radius = 6.0;  // stays within the region
    Array polar = geom::polar_transform(region, spec);
    for (int64_t i = 0; i < polar.numel(); ++i) CHECK(polar[i] == Catch::Approx(1.0));
  }
  SECTION("degenerate radius is rejected") {
    Array region({5, 5}, 1.0);
    spec.origin_y = 2;
    spec.origin_x = 2;
    spec.radius = 0.0;
    CHECK_THROWS_AS(geom::polar_transform(region, spec), std::invalid_argument);
  }
  SECTION("grid invariants are enforced") {
    CHECK_THROWS_AS(geom::check_grid({1, 12}), std::invalid_argument);
    CHECK_THROWS_AS(geom::check_grid({8, 3}), std::invalid_argument);
  }
}

TEST_CASE("polar transform of a centered disk matches ray marching", "[geometry][oracle]") {
  // brute-force oracle: walk each ray and find the exit radius of the disk
  const int N = 31;
  const double rho = 9.0;
  Array region({N, N});
  const int c = N / 2;
  for (int y = 0; y < N; ++y)
    for (int x = 0; x < N; ++x)
      if (std::hypot(x - c, y - c) <= rho) region.at(y, x) = 1.0;
  geom::PolarSpec spec;
  spec.origin_y = c;
  spec.origin_x = c;
  spec.radius = 13.0;
  spec.grid = {14, 24};
  Array polar = geom::polar_transform(region, spec);
  for (int j = 0; j < spec.grid.n_theta; ++j)
    for (int i = 0; i < spec.grid.n_r; ++i) {
      const double r = spec.radius * i / (spec.grid.n_r - 1);
      if (r <= rho - 1.0) CHECK(polar.at(i, j) == Catch::Approx(1.0).margin(1e-9));
      if (r >= rho + 1.0) CHECK(polar.at(i, j) == Catch::Approx(0.0).margin(1e-9));
    }
}

TEST_CASE("polar transform preserves the input range", "[geometry][property]") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Array region = rand_array({12, 12}, rng, -0.5, 1.5);
    geom::PolarSpec spec;
    spec.origin_y = rng.uniform_int(0, 11);
    spec.origin_x = rng.uniform_int(0, 11);
    spec.radius = rng.uniform(1.0, 10.0);
    spec.grid = {6, 10};
    Array polar = geom::polar_transform(region, spec);
    const double lo = std::min(region.min(), 0.0);
    const double hi = std::max(region.max(), 0.0);
    CHECK(polar.min() >= lo - 1e-12);
    CHECK(polar.max() <= hi + 1e-12);
  }
}

TEST_CASE("masking and cropping commute", "[geometry][property]") {
  Rng rng(23);
  for (int trial = 0; trial < 25; ++trial) {
    const int H = 18, W = 15;
    geom::BBox box = random_box(rng, H, W);
    const int margin = rng.uniform_int(0, 4);
    geom::CropRegion r = geom::crop_with_margin(box, H, W, margin);
    Array cropped_mask = geom::crop_plane(geom::box_mask(box, H, W), r);
    geom::BBox local{box.x1 - r.x0, box.y1 - r.y0, box.x2 - r.x0, box.y2 - r.y0, 1};
    Array mask_local = geom::box_mask(local, r.h, r.w);
    CHECK(cropped_mask == mask_local);
  }
}

TEST_CASE("polar columns of a box mask are prefixes of ones", "[geometry][property]") {
  Rng rng(29);
  for (int trial = 0; trial < 60; ++trial) {
    const int H = rng.uniform_int(6, 20), W = rng.uniform_int(6, 20);
    geom::BBox box = random_box(rng, H, W);
    Array mask = geom::box_mask(box, H, W);
    geom::PolarSpec spec;
    spec.origin_y = rng.uniform_int(box.y1, box.y2);
    spec.origin_x = rng.uniform_int(box.x1, box.x2);
    spec.radius = box.half_diagonal();
    spec.grid = {rng.uniform_int(4, 16), rng.uniform_int(6, 24)};
    Array polar = geom::binarize(geom::polar_transform(mask, spec), 0.5);
    for (int j = 0; j < spec.grid.n_theta; ++j) {
      bool seen_zero = false;
      for (int i = 0; i < spec.grid.n_r; ++i) {
        if (polar.at(i, j) == 0.0) seen_zero = true;
        if (seen_zero) CHECK(polar.at(i, j) == 0.0);
      }
    }
  }
}
