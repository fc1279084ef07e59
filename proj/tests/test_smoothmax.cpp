#include <catch2/catch_amalgamated.hpp>

#include "boxmil/smoothmax.hpp"
#include "test_support.hpp"

using namespace boxmil;
using testsup::rand_array;

TEST_CASE("bag_max", "[smoothmax]") {
  CHECK(smax::bag_max(std::vector<double>{0.2, 0.9, 0.4}) == 0.9);
  CHECK(smax::bag_max(std::vector<double>{0.37}) == 0.37);
  CHECK(smax::bag_max(std::vector<double>{0.5, 0.5, 0.5}) == 0.5);
  CHECK_THROWS_AS(smax::bag_max(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("alpha-softmax frozen values", "[smoothmax]") {
  // expected values computed with 40-digit arithmetic from the closed form
  CHECK(smax::alpha_softmax(std::vector<double>{0.0, 1.0}, 8.0) ==
        Catch::Approx(0.9996646498695335).epsilon(1e-12));
  CHECK(smax::alpha_softmax(std::vector<double>{0.2, 0.8}, 4.0) ==
        Catch::Approx(0.7500963821036466).epsilon(1e-12));
  CHECK(smax::alpha_softmax(std::vector<double>{0.6, 0.6, 0.6}, 3.0) == Catch::Approx(0.6));
  CHECK_THROWS_AS(smax::alpha_softmax(std::vector<double>{0.5}, 0.0), std::invalid_argument);
}

TEST_CASE("alpha-quasimax frozen values", "[smoothmax]") {
  CHECK(smax::alpha_quasimax(std::vector<double>{0.0, 1.0}, 8.0) ==
        Catch::Approx(0.9133985282266188).epsilon(1e-12));
  // constant bags are exact: log(n e^{alpha p})/alpha - log(n)/alpha = p
  CHECK(smax::alpha_quasimax(std::vector<double>{0.31, 0.31, 0.31, 0.31}, 5.0) ==
        Catch::Approx(0.31).epsilon(1e-14));
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    Array bag = rand_array({7}, rng, 0, 1);
    std::vector<double> v(bag.data(), bag.data() + bag.numel());
    CHECK(smax::alpha_quasimax(v, 6.0) <= smax::bag_max(v));
  }
}

TEST_CASE("polar weights", "[smoothmax]") {
  auto pw = smax::polar_weights(10, 0.5);
  REQUIRE(pw.w.size() == 10);
  CHECK(pw.w[0] == 1.0);
  CHECK(pw.w[9] == Catch::Approx(0.5).margin(1e-9));
  CHECK(pw.w[4] == Catch::Approx(0.8720417641155990).epsilon(1e-12));
  for (size_t k = 1; k < pw.w.size(); ++k) CHECK(pw.w[k] < pw.w[k - 1]);
  CHECK_THROWS_AS(smax::polar_weights(10, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(smax::polar_weights(10, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(smax::polar_weights(1, 0.5), std::invalid_argument);
}

TEST_CASE("weighted smooth maximum", "[smoothmax]") {
  const std::vector<double> values{0.0, 1.0};
  const std::vector<double> weights{1.0, 0.5};
  SECTION("frozen quasimax value") {
    CHECK(smax::weighted_smoothmax(values, weights, smax::SmoothMaxKind::quasimax(8.0)) ==
          Catch::Approx(0.8627573014522457).epsilon(1e-12));
  }
  SECTION("all-ones weights reduce to the unweighted forms exactly") {
    Rng rng(9);
    for (int i = 0; i < 20; ++i) {
      Array bag = rand_array({6}, rng, 0, 1);
      std::vector<double> v(bag.data(), bag.data() + bag.numel());
      std::vector<double> ones(v.size(), 1.0);
      CHECK(smax::weighted_smoothmax(v, ones, smax::SmoothMaxKind::quasimax(4.0)) ==
            smax::alpha_quasimax(v, 4.0));
      CHECK(smax::weighted_smoothmax(v, ones, smax::SmoothMaxKind::softmax(4.0)) ==
            smax::alpha_softmax(v, 4.0));
    }
  }
  SECTION("constant bags are fixed points for any weights") {
    const std::vector<double> v{0.42, 0.42, 0.42};
    const std::vector<double> w{1.0, 0.8, 0.3};
    CHECK(smax::weighted_smoothmax(v, w, smax::SmoothMaxKind::softmax(5.0)) ==
          Catch::Approx(0.42).epsilon(1e-14));
    CHECK(smax::weighted_smoothmax(v, w, smax::SmoothMaxKind::quasimax(5.0)) ==
          Catch::Approx(0.42).epsilon(1e-14));
  }
  SECTION("weighted quasimax with weights <= 1 stays below the max") {
    Rng rng(14);
    for (int i = 0; i < 100; ++i) {
      Array bag = rand_array({8}, rng, 0, 1);
      std::vector<double> v(bag.data(), bag.data() + bag.numel());
      std::vector<double> w = smax::polar_weights(8, rng.uniform(0.1, 0.9)).w;
      CHECK(smax::weighted_smoothmax(v, w, smax::SmoothMaxKind::quasimax(rng.uniform(0.5, 8))) <=
            smax::bag_max(v));
    }
  }
  SECTION("contract violations") {
    CHECK_THROWS_AS(smax::weighted_smoothmax(values, std::vector<double>{1.0},
                                             smax::SmoothMaxKind::quasimax(4.0)),
                    std::invalid_argument);
    CHECK_THROWS_AS(smax::weighted_smoothmax(values, weights, smax::SmoothMaxKind::hard()),
                    std::invalid_argument);
  }
}

TEST_CASE("reducers bracket the max and tighten with alpha", "[smoothmax][property]") {
  Rng rng(31);
  int tighter_soft = 0, tighter_quasi = 0;
  const int kBags = 1000;
  for (int i = 0; i < kBags; ++i) {
    const int n = rng.uniform_int(2, 24);
    Array bag = rand_array({n}, rng, 0, 1);
    std::vector<double> v(bag.data(), bag.data() + bag.numel());
    const double m = smax::bag_max(v);
    const double lo = *std::min_element(v.begin(), v.end());
    const double s4 = smax::alpha_softmax(v, 4.0), s8 = smax::alpha_softmax(v, 8.0);
    const double q4 = smax::alpha_quasimax(v, 4.0), q8 = smax::alpha_quasimax(v, 8.0);
    CHECK(q4 <= m);
    CHECK(q8 <= m);
    CHECK(s4 >= lo);
    CHECK(s4 <= m);
    CHECK(s8 >= lo);
    CHECK(s8 <= m);
    if (std::abs(s8 - m) < std::abs(s4 - m)) ++tighter_soft;
    if (std::abs(q8 - m) < std::abs(q4 - m)) ++tighter_quasi;
  }
  CHECK(tighter_soft >= kBags * 99 / 100);
  CHECK(tighter_quasi >= kBags * 99 / 100);
}

TEST_CASE("reducers are permutation invariant", "[smoothmax][property]") {
  Rng rng(41);
  for (int i = 0; i < 30; ++i) {
    const int n = rng.uniform_int(2, 12);
    Array bag = rand_array({n}, rng, 0, 1);
    std::vector<double> v(bag.data(), bag.data() + bag.numel());
    std::vector<double> w = smax::polar_weights(n, 0.3).w;
    std::vector<size_t> perm(v.size());
    for (size_t k = 0; k < perm.size(); ++k) perm[k] = k;
    for (size_t k = perm.size(); k > 1; --k)
      std::swap(perm[k - 1], perm[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(k) - 1))]);
    std::vector<double> pv(v.size()), pw(v.size());
    for (size_t k = 0; k < perm.size(); ++k) {
      pv[k] = v[perm[k]];
      pw[k] = w[perm[k]];
    }
    CHECK(smax::alpha_softmax(pv, 4.0) == Catch::Approx(smax::alpha_softmax(v, 4.0)).epsilon(1e-12));
    CHECK(smax::alpha_quasimax(pv, 4.0) ==
          Catch::Approx(smax::alpha_quasimax(v, 4.0)).epsilon(1e-12));
    CHECK(smax::weighted_smoothmax(pv, pw, smax::SmoothMaxKind::quasimax(2.0)) ==
          Catch::Approx(smax::weighted_smoothmax(v, w, smax::SmoothMaxKind::quasimax(2.0)))
              .epsilon(1e-12));
  }
}

TEST_CASE("smooth reducers propagate gradient to every element", "[smoothmax][gradient]") {
  // Quasimax partials e^{alpha p_k} / sum e^{alpha p} are strictly positive
  // for any bag. Softmax partials e^{alpha p_k}(1 + alpha p_k - alpha S)/den
  // are strictly positive once alpha * (S - min p) < 1; both reducers always
  // distribute exactly unit gradient mass over the bag.
  Rng rng(51);
  for (int i = 0; i < 20; ++i) {
    const int n = rng.uniform_int(2, 10);
    Array bag = rand_array({n}, rng, 0, 1);
    Array narrow = rand_array({n}, rng, 0.4, 0.6);
    std::vector<double> w = smax::polar_weights(n, 0.4).w;
    for (bool weighted : {false, true}) {
      auto grad = [&](const Array& values, const smax::SmoothMaxKind& kind) {
        ad::Tape t;
        ad::Var v = t.leaf(values);
        ad::Var r = weighted ? smax::weighted_bag_prediction(t, v, w, kind)
                             : smax::bag_prediction(t, v, kind);
        return t.backward(r).wrt(v);
      };
      Array gq = grad(bag, smax::SmoothMaxKind::quasimax(4.0));
      for (int64_t k = 0; k < gq.numel(); ++k) CHECK(gq[k] > 0.0);
      Array gs = grad(narrow, smax::SmoothMaxKind::softmax(1.0));
      for (int64_t k = 0; k < gs.numel(); ++k) CHECK(gs[k] > 0.0);
      for (const Array* g : {&gq, &gs}) {
        double mass = 0.0;
        for (int64_t k = 0; k < g->numel(); ++k) mass += (*g)[k];
        CHECK(mass == Catch::Approx(1.0).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("no overflow at large alpha", "[smoothmax]") {
  std::vector<double> v{0.0, 0.25, 0.5, 0.75, 1.0};
  CHECK(std::isfinite(smax::alpha_softmax(v, 64.0)));
  CHECK(std::isfinite(smax::alpha_quasimax(v, 64.0)));
  std::vector<double> w{1.0, 0.9, 0.8, 0.7, 0.6};
  CHECK(std::isfinite(smax::weighted_smoothmax(v, w, smax::SmoothMaxKind::softmax(64.0))));
  CHECK(std::isfinite(smax::weighted_smoothmax(v, w, smax::SmoothMaxKind::quasimax(64.0))));
}
