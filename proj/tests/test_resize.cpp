#include "lce/resize.hpp"

#include "catch2/catch_amalgamated.hpp"
#include "test_util.hpp"

using namespace lce;
using namespace testutil;

namespace {

TEST_CASE("cubic kernel values at the canonical phases") {
  CHECK(cubic_weight(0.0) == Catch::Approx(1.0).margin(1e-15));
  CHECK(cubic_weight(1.0) == Catch::Approx(0.0).margin(1e-15));
  CHECK(cubic_weight(2.0) == Catch::Approx(0.0).margin(1e-15));
  CHECK(cubic_weight(0.5) == Catch::Approx(0.5625).margin(1e-15));
  CHECK(cubic_weight(1.5) == Catch::Approx(-0.0625).margin(1e-15));
  CHECK(cubic_weight(-1.5) == Catch::Approx(-0.0625).margin(1e-15));
  CHECK(cubic_weight(2.5) == 0.0);
}

TEST_CASE("x2 downscale taps, no antialias: the phase-0.5 four-tap stencil") {
  auto taps = resample::plan_axis(16, 8, /*antialias=*/false);
  const auto& t = taps[3];  // interior output
  REQUIRE(t.weights.size() == 4);
  CHECK(t.start == 5);
  const double expect[4] = {-0.0625, 0.5625, 0.5625, -0.0625};
  for (int i = 0; i < 4; ++i)
    CHECK(t.weights[size_t(i)] == Catch::Approx(expect[i]).margin(1e-12));
}

TEST_CASE("x2 downscale taps with antialias widen to eight") {
  auto taps = resample::plan_axis(16, 8, /*antialias=*/true);
  const auto& t = taps[3];
  REQUIRE(t.weights.size() == 8);
  CHECK(t.start == 3);
  const double expect[8] = {-0.01171875, -0.03515625, 0.11328125, 0.43359375,
                            0.43359375,  0.11328125,  -0.03515625, -0.01171875};
  double sum = 0;
  for (int i = 0; i < 8; ++i) {
    CHECK(t.weights[size_t(i)] == Catch::Approx(expect[i]).margin(1e-12));
    sum += t.weights[size_t(i)];
  }
  CHECK(sum == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("every tap row is normalized, including clamped borders") {
  for (bool aa : {false, true})
    for (auto [in, out] : {std::pair<index_t, index_t>{13, 7}, {8, 24}, {5, 5}}) {
      auto taps = resample::plan_axis(in, out, aa);
      for (const auto& t : taps) {
        double sum = 0;
        for (double w : t.weights) sum += w;
        CHECK(sum == Catch::Approx(1.0).margin(1e-12));
        CHECK(t.start >= 0);
        CHECK(t.start + index_t(t.weights.size()) <= in);
      }
    }
}

TEST_CASE("scale 1 is the identity") {
  Tensor64 x(Shape{2, 3, 5, 7});
  fill_rand(x, 11);
  Tensor64 y = bicubic_resize(x, 5, 7, true);
  for (index_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("constant image stays constant through any resize") {
  Tensor64 x(Shape{1, 2, 8, 8});
  for (index_t i = 0; i < x.numel(); ++i) x[i] = 0.37;
  for (auto [h, w] : {std::pair<index_t, index_t>{4, 4}, {16, 16}, {6, 10}}) {
    Tensor64 y = bicubic_resize(x, h, w, true);
    for (index_t i = 0; i < y.numel(); ++i)
      CHECK(y[i] == Catch::Approx(0.37).margin(1e-12));
  }
}

TEST_CASE("resampling is linear in the image") {
  Tensor64 x(Shape{1, 1, 8, 8}), y(Shape{1, 1, 8, 8});
  fill_rand(x, 5);
  fill_rand(y, 6);
  Tensor64 mix(Shape{1, 1, 8, 8});
  for (index_t i = 0; i < x.numel(); ++i) mix[i] = 0.7 * x[i] - 0.3 * y[i];
  Tensor64 rm = bicubic_resize(mix, 4, 4, true);
  Tensor64 rx = bicubic_resize(x, 4, 4, true);
  Tensor64 ry = bicubic_resize(y, 4, 4, true);
  for (index_t i = 0; i < rm.numel(); ++i)
    CHECK(rm[i] == Catch::Approx(0.7 * rx[i] - 0.3 * ry[i]).margin(1e-12));
}

TEST_CASE("upscale x2 reproduces a linear ramp away from the borders") {
  Tensor64 x(Shape{1, 1, 8, 16});
  for (index_t h = 0; h < 8; ++h)
    for (index_t w = 0; w < 16; ++w) x[h * 16 + w] = double(w);
  Tensor64 y = bicubic_resize(x, 8, 32, false);
  for (index_t w2 = 8; w2 <= 20; ++w2) {
    const double coord = (double(w2) + 0.5) / 2.0 - 0.5;
    CHECK(y[3 * 32 + w2] == Catch::Approx(coord).margin(1e-12));
  }
}

TEST_CASE("rational scaling and its divisibility guard") {
  Tensor64 x(Shape{1, 1, 4, 4});
  fill_rand(x, 3);
  Tensor64 y = bicubic_scale(x, 3, 2, true);
  CHECK(y.shape() == Shape{1, 1, 6, 6});
  Tensor64 bad(Shape{1, 1, 5, 5});
  CHECK_THROWS_AS(bicubic_scale(bad, 3, 2, true), Error);
  CHECK_THROWS_AS(bicubic_resize(bad, 0, 5, true), Error);
}

TEST_CASE("clip01 clamps both tails") {
  Tensor64 x(Shape{4});
  x[0] = -0.5; x[1] = 0.25; x[2] = 1.0; x[3] = 1.75;
  clip01(x);
  CHECK(x[0] == 0.0);
  CHECK(x[1] == 0.25);
  CHECK(x[2] == 1.0);
  CHECK(x[3] == 1.0);
}

}  // namespace
