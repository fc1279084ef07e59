#include <algorithm>
#include <catch2/catch_amalgamated.hpp>

#include "boxmil/bags.hpp"
#include "test_support.hpp"

using namespace boxmil;
using testsup::rand_array;
using testsup::random_box;

namespace {

ad::Var const_pred(ad::Tape& t, const Array& pred) { return t.constant(pred); }

std::vector<double> bag_values(ad::Tape& t, const mil::Bag& b) {
  const Array& v = t.value(b.values);
  return std::vector<double>(v.data(), v.data() + v.numel());
}

// Independent membership oracle for polar samples over a box mask. Bilinear
// interpolation of a separable 0/1 rectangle indicator factorizes into two
// 1-D ramp profiles, so membership is support * ramp(x) * ramp(y) >= 0.5.
bool polar_membership_oracle(const geom::BBox& box, const geom::CropRegion& region,
                             mil::PixelCoord origin, double r, double theta) {
  const double y = (origin.y - region.y0) + r * std::sin(theta);
  const double x = (origin.x - region.x0) + r * std::cos(theta);
  if (!(y >= 0 && y <= region.h - 1 && x >= 0 && x <= region.w - 1)) return false;
  const double bx1 = box.x1 - region.x0, bx2 = box.x2 - region.x0;
  const double by1 = box.y1 - region.y0, by2 = box.y2 - region.y0;
  auto ramp = [](double v, double lo, double hi) {
    return std::min(1.0, std::max(0.0, std::min(v - (lo - 1.0), (hi + 1.0) - v)));
  };
  return ramp(x, bx1, bx2) * ramp(y, by1, by2) >= 0.5;
}

}  // namespace

TEST_CASE("baseline positive bags are the crossing lines", "[bags]") {
  SECTION("5-tall, 7-wide box yields H+W = 12 bags") {
    Rng rng(1);
    Array pred = rand_array({16, 16, 1}, rng, 0, 1);
    ad::Tape t;
    auto bags = mil::baseline_positive_bags(t, const_pred(t, pred), {4, 3, 10, 7, 1});
    CHECK(bags.size() == 12);
  }
  SECTION("1x1 box yields two singleton bags") {
    Array pred({8, 8, 1}, 0.25);
    ad::Tape t;
    auto bags = mil::baseline_positive_bags(t, const_pred(t, pred), {5, 5, 5, 5, 1});
    REQUIRE(bags.size() == 2);
    CHECK(t.value(bags[0].values).numel() == 1);
    CHECK(t.value(bags[1].values).numel() == 1);
  }
  SECTION("constant prediction gives constant bag max") {
    Array pred({10, 10, 1}, 0.7);
    ad::Tape t;
    auto bags = mil::baseline_positive_bags(t, const_pred(t, pred), {2, 3, 6, 8, 1});
    for (const auto& b : bags) CHECK(smax::bag_max(bag_values(t, b)) == 0.7);
  }
}

TEST_CASE("pixel negative bags count the uncovered pixels", "[bags]") {
  Rng rng(2);
  Array pred = rand_array({10, 10, 1}, rng, 0, 1);
  ad::Tape t;
  ad::Var pv = const_pred(t, pred);
  CHECK(mil::pixel_negative_bags(t, pv, {}, 1).size() == 100);
  CHECK(mil::pixel_negative_bags(t, pv, {{0, 0, 9, 9, 1}}, 1).empty());
  CHECK(mil::pixel_negative_bags(t, pv, {{2, 2, 5, 5, 1}}, 1).size() == 84);
  SECTION("count plus union is exactly H*W, overlapping boxes included") {
    for (int trial = 0; trial < 20; ++trial) {
      Rng trng(mix_seed(60, static_cast<uint64_t>(trial)));
      std::vector<geom::BBox> boxes{random_box(trng, 10, 10), random_box(trng, 10, 10)};
      int64_t unioned = 0;
      for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x)
          if (boxes[0].contains(y, x) || boxes[1].contains(y, x)) ++unioned;
      ad::Tape tt;
      auto bags = mil::pixel_negative_bags(tt, const_pred(tt, pred), boxes, 1);
      CHECK(static_cast<int64_t>(bags.size()) + unioned == 100);
    }
  }
  SECTION("other categories' boxes do not mask pixels") {
    ad::Tape tt;
    Array pred2 = rand_array({10, 10, 2}, rng, 0, 1);
    auto bags = mil::pixel_negative_bags(tt, const_pred(tt, pred2), {{2, 2, 5, 5, 2}}, 1);
    CHECK(bags.size() == 100);
  }
}

TEST_CASE("baseline negative bags are the untouched lines", "[bags]") {
  Rng rng(3);
  Array pred = rand_array({10, 10, 1}, rng, 0, 1);
  ad::Tape t;
  ad::Var pv = const_pred(t, pred);
  CHECK(mil::baseline_negative_bags(t, pv, {}, 1).size() == 20);
  SECTION("box spanning all rows leaves only free columns") {
    auto bags = mil::baseline_negative_bags(t, pv, {{4, 0, 6, 9, 1}}, 1);
    CHECK(bags.size() == 7);  // columns 0..3 and 7..9
  }
  SECTION("box rows 2..4, cols 2..4 leaves 7 row-bags and 7 column-bags") {
    auto bags = mil::baseline_negative_bags(t, pv, {{2, 2, 4, 4, 1}}, 1);
    CHECK(bags.size() == 14);
  }
}

TEST_CASE("parallel bags at zero angle reproduce the baseline bags", "[bags][oracle]") {
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(mix_seed(70, static_cast<uint64_t>(trial)));
    const int H = 4 * rng.uniform_int(3, 6), W = 4 * rng.uniform_int(3, 6);
    Array pred = rand_array({H, W, 1}, rng, 0, 1);
    geom::BBox box = random_box(rng, H, W);
    ad::Tape t;
    ad::Var pv = const_pred(t, pred);
    auto base = mil::baseline_positive_bags(t, pv, box);
    auto par0 = mil::parallel_positive_bags(t, pv, box, {0, 0, 1}, 2);
    REQUIRE(par0.size() == base.size());
    auto collect = [&t](const std::vector<mil::Bag>& bags) {
      std::vector<std::vector<double>> out;
      for (const auto& b : bags) {
        auto v = bag_values(t, b);
        std::sort(v.begin(), v.end());
        out.push_back(std::move(v));
      }
      std::sort(out.begin(), out.end());
      return out;
    };
    auto a = collect(base);
    auto b = collect(par0);
    for (size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].size() == b[i].size());
      for (size_t k = 0; k < a[i].size(); ++k) CHECK(std::abs(a[i][k] - b[i][k]) <= 1e-6);
    }
  }
}

TEST_CASE("parallel bags counting and values", "[bags]") {
  SECTION("constant prediction of one gives bag max one at every angle") {
    Array pred({20, 20, 1}, 1.0);
    ad::Tape t;
    auto bags =
        mil::parallel_positive_bags(t, const_pred(t, pred), {4, 4, 14, 14, 1}, {-40, 40, 20}, 2);
    REQUIRE(!bags.empty());
    for (const auto& b : bags) CHECK(smax::bag_max(bag_values(t, b)) == 1.0);
  }
  SECTION("11x11 box: every angle contributes at least H+W bags") {
    Rng rng(7);
    Array pred = rand_array({24, 24, 1}, rng, 0, 1);
    const geom::BBox box{6, 6, 16, 16, 1};
    size_t total = 0;
    for (double angle : std::vector<double>{-40, -20, 0, 20, 40}) {
      mil::LineBagPlan lp = mil::parallel_plan(box, 24, 24, angle, 2);
      CHECK(lp.bags.size() >= 22);
      total += lp.bags.size();
    }
    ad::Tape t;
    auto bags = mil::parallel_positive_bags(t, const_pred(t, pred), box, {-40, 40, 20}, 2);
    CHECK(bags.size() == total);
  }
}

TEST_CASE("every positive bag is non-empty with values in [0,1]", "[bags][property]") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(mix_seed(90, static_cast<uint64_t>(trial)));
    const int H = 4 * rng.uniform_int(3, 5), W = 4 * rng.uniform_int(3, 5);
    Array pred = rand_array({H, W, 1}, rng, 0, 1);
    geom::BBox box = random_box(rng, H, W);
    ad::Tape t;
    ad::Var pv = const_pred(t, pred);
    auto check_bags = [&](const std::vector<mil::Bag>& bags) {
      for (const auto& b : bags) {
        auto v = bag_values(t, b);
        REQUIRE(!v.empty());
        for (double x : v) {
          CHECK(x >= 0.0);
          CHECK(x <= 1.0);
        }
      }
    };
    check_bags(mil::baseline_positive_bags(t, pv, box));
    check_bags(mil::parallel_positive_bags(t, pv, box, {-40, 40, 20}, 2));
    mil::PixelCoord origin = mil::select_polar_origin(pred, box, 1);
    check_bags(mil::polar_positive_bags(t, pv, box, origin, {8, 16}, 2, 0.5));
  }
}

TEST_CASE("polar origin selection", "[bags]") {
  Array pred({8, 8, 1}, 0.1);
  SECTION("single peak") {
    pred.at(3, 5, 0) = 0.9;
    CHECK(mil::select_polar_origin(pred, {1, 1, 6, 6, 1}, 1).y == 3);
    CHECK(mil::select_polar_origin(pred, {1, 1, 6, 6, 1}, 1).x == 5);
  }
  SECTION("uniform prediction breaks ties to the box top-left") {
    Array uniform({8, 8, 1}, 0.4);
    auto o = mil::select_polar_origin(uniform, {2, 3, 6, 6, 1}, 1);
    CHECK(o.y == 3);
    CHECK(o.x == 2);
  }
  SECTION("peak outside the box is ignored") {
    pred.at(0, 0, 0) = 1.0;
    pred.at(4, 4, 0) = 0.6;
    auto o = mil::select_polar_origin(pred, {2, 2, 6, 6, 1}, 1);
    CHECK(o.y == 4);
    CHECK(o.x == 4);
  }
  SECTION("invariant under monotone transformations") {
    Rng rng(15);
    for (int trial = 0; trial < 20; ++trial) {
      Array p = rand_array({8, 8, 1}, rng, 0, 1);
      geom::BBox box = random_box(rng, 8, 8);
      auto o1 = mil::select_polar_origin(p, box, 1);
      Array p3 = p;
      for (int64_t i = 0; i < p3.numel(); ++i) p3[i] = p3[i] * p3[i] * p3[i];  // monotone on [0,1]
      auto o2 = mil::select_polar_origin(p3, box, 1);
      CHECK(o1.y == o2.y);
      CHECK(o1.x == o2.x);
    }
  }
}

TEST_CASE("polar positive bags", "[bags]") {
  Rng rng(19);
  SECTION("exactly n_theta bags") {
    Array pred = rand_array({20, 20, 1}, rng, 0, 1);
    geom::BBox box{4, 5, 15, 14, 1};
    ad::Tape t;
    auto origin = mil::select_polar_origin(pred, box, 1);
    auto bags = mil::polar_positive_bags(t, const_pred(t, pred), box, origin, {12, 60}, 2, 0.5);
    CHECK(bags.size() == 60);
  }
  SECTION("constant prediction of one gives bag max one") {
    Array pred({16, 16, 1}, 1.0);
    ad::Tape t;
    auto bags =
        mil::polar_positive_bags(t, const_pred(t, pred), {3, 3, 12, 12, 1}, {7, 7}, {10, 24}, 2, 0.5);
    for (const auto& b : bags) CHECK(smax::bag_max(bag_values(t, b)) == 1.0);
  }
  SECTION("square box with centered origin has symmetric axis lengths") {
    Array pred({20, 20, 1}, 0.5);
    geom::BBox box{4, 4, 14, 14, 1};
    ad::Tape t;
    auto bags = mil::polar_positive_bags(t, const_pred(t, pred), box, {9, 9}, {16, 4}, 2, 0.5);
    REQUIRE(bags.size() == 4);  // columns at 0, 90, 180, 270 degrees
    std::vector<int64_t> lens;
    for (const auto& b : bags) lens.push_back(t.value(b.values).numel());
    const auto [lo, hi] = std::minmax_element(lens.begin(), lens.end());
    CHECK(*hi - *lo <= 1);
  }
  SECTION("weights start at one and follow the radial profile") {
    Array pred({16, 16, 1}, 0.5);
    ad::Tape t;
    auto bags =
        mil::polar_positive_bags(t, const_pred(t, pred), {2, 2, 13, 13, 1}, {8, 8}, {10, 12}, 2, 0.4);
    auto w = smax::polar_weights(10, 0.4).w;
    for (const auto& b : bags) {
      REQUIRE(!b.weights.empty());
      CHECK(b.weights[0] == 1.0);
      for (size_t k = 0; k < b.weights.size(); ++k) CHECK(b.weights[k] == w[k]);
      CHECK(b.weights.size() == static_cast<size_t>(t.value(b.values).numel()));
    }
  }
  SECTION("origin outside the box is a contract violation") {
    Array pred({16, 16, 1}, 0.5);
    ad::Tape t;
    CHECK_THROWS_AS(
        mil::polar_positive_bags(t, const_pred(t, pred), {4, 4, 8, 8, 1}, {1, 1}, {8, 12}, 2, 0.5),
        std::invalid_argument);
  }
}

TEST_CASE("polar column membership matches the ray-marching oracle", "[bags][oracle]") {
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(mix_seed(110, static_cast<uint64_t>(trial)));
    const int H = rng.uniform_int(8, 24), W = rng.uniform_int(8, 24);
    geom::BBox box = random_box(rng, std::min(H, 20), std::min(W, 20));  // boxes <= 20x20
    const geom::PolarGrid grid{rng.uniform_int(4, 14), rng.uniform_int(8, 24)};
    mil::PixelCoord origin{rng.uniform_int(box.y1, box.y2), rng.uniform_int(box.x1, box.x2)};
    const int margin = 2;
    mil::LineBagPlan lp = mil::polar_plan_for_box(box, H, W, origin, grid, margin);
    const double R = box.half_diagonal();
    for (int j = 0; j < grid.n_theta; ++j) {
      const double theta = 2.0 * kPi * j / grid.n_theta;
      // march outward: the oracle prefix must equal the production bag length
      int oracle_prefix = 0;
      for (int i = 0; i < grid.n_r; ++i) {
        const double r = R * i / (grid.n_r - 1);
        if (!polar_membership_oracle(box, lp.region, origin, r, theta)) break;
        ++oracle_prefix;
      }
      CHECK(static_cast<int>(lp.bags[static_cast<size_t>(j)].size()) == oracle_prefix);
      // and full membership agrees sample by sample
      for (int i = 0; i < grid.n_r; ++i) {
        const double r = R * i / (grid.n_r - 1);
        const bool member = polar_membership_oracle(box, lp.region, origin, r, theta);
        CHECK((lp.mask.at(i, j) == 1.0) == member);
      }
    }
  }
}
