// Half-spectrum FFT contracts: oracle agreement, Parseval, adjointness,
// roundtrips, guarded spectral division.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "lce/fft.hpp"
#include "lce/testing/naive_dft.hpp"
#include "test_util.hpp"

using lce::index_t;
using lce::Shape;
using lce::Spectrum64;
using lce::Tensor;
using lce::Tensor64;
using testutil::make;

namespace {

// gathers one channel into a double vector for the oracle
std::vector<double> channel_of(const Tensor64& t, index_t bc) {
  const index_t HW = t.dim(2) * t.dim(3);
  std::vector<double> v(static_cast<size_t>(HW));
  for (index_t i = 0; i < HW; ++i) v[static_cast<size_t>(i)] = t.data()[bc * HW + i];
  return v;
}

}  // namespace

TEST_CASE("constant image concentrates in the DC bin") {
  const index_t H = 6, W = 5;
  const double v = 0.37;
  Tensor64 x = Tensor64::full({1, 1, H, W}, v);
  Spectrum64 s = lce::rfft2_raw(x);
  REQUIRE(s.real[0] == Catch::Approx(v * H * W).margin(1e-9));
  REQUIRE(std::abs(s.imag[0]) < 1e-5);  // DC imaginary vanishes for real input
  for (index_t i = 1; i < s.real.numel(); ++i) {
    REQUIRE(std::abs(s.real[i]) < 1e-4);
    REQUIRE(std::abs(s.imag[i]) < 1e-4);
  }
}

TEST_CASE("unit impulse at the origin has a flat spectrum") {
  Tensor64 x(Shape{1, 1, 4, 6});
  x[0] = 1.0;
  Spectrum64 s = lce::rfft2_raw(x);
  for (index_t i = 0; i < s.real.numel(); ++i) {
    REQUIRE(s.real[i] == Catch::Approx(1.0).margin(1e-5));
    REQUIRE(std::abs(s.imag[i]) < 1e-5);
  }
}

TEST_CASE("fast transform matches the naive oracle on all sizes 1..8") {
  for (index_t H = 1; H <= 8; ++H)
    for (index_t W = 1; W <= 8; ++W) {
      Tensor64 x(Shape{1, 1, H, W});
      testutil::fill_rand(x, 1000 + H * 17 + W);
      Spectrum64 s = lce::rfft2_raw(x);
      auto oracle = lce::testing::naive_dft2(channel_of(x, 0), H, W);
      const index_t W2 = W / 2 + 1;
      double max_err = 0;
      for (index_t u = 0; u < H; ++u)
        for (index_t v = 0; v < W2; ++v) {
          max_err = std::max(max_err, std::abs(s.real[u * W2 + v] -
                                               oracle.re[static_cast<size_t>(u * W + v)]));
          max_err = std::max(max_err, std::abs(s.imag[u * W2 + v] -
                                               oracle.im[static_cast<size_t>(u * W + v)]));
        }
      INFO("H=" << H << " W=" << W);
      REQUIRE(max_err < 1e-6);

      // inverse agrees with the naive full-grid inverse of the expanded half
      Tensor64 back = lce::irfft2_raw(s);
      auto full = lce::testing::expand_half(
          std::vector<double>(s.real.data(), s.real.data() + H * W2),
          std::vector<double>(s.imag.data(), s.imag.data() + H * W2), H, W);
      auto naive_back = lce::testing::naive_idft2(full);
      for (index_t i = 0; i < H * W; ++i) {
        REQUIRE(std::abs(back[i] - naive_back[static_cast<size_t>(i)]) < 1e-6);
        REQUIRE(back[i] == Catch::Approx(x[i]).margin(1e-6));  // roundtrip
      }
    }
}

TEST_CASE("float roundtrip on 16x16x4 stays under 1e-5") {
  Tensor x(Shape{1, 4, 16, 16});
  testutil::fill_rand(x, 42);
  lce::Spectrum s = lce::rfft2_raw(x);
  Tensor back = lce::irfft2_raw(s);
  float max_err = 0;
  for (index_t i = 0; i < x.numel(); ++i)
    max_err = std::max(max_err, std::abs(back[i] - x[i]));
  REQUIRE(max_err < 1e-5f);
}

TEST_CASE("DC-only spectrum reconstructs a constant image") {
  const index_t H = 5, W = 7;
  Spectrum64 s;
  s.real = Tensor64(Shape{1, 1, H, W / 2 + 1});
  s.imag = Tensor64(Shape{1, 1, H, W / 2 + 1});
  s.original_width = W;
  const double v = -1.6;
  s.real[0] = v * H * W;
  Tensor64 img = lce::irfft2_raw(s);
  for (index_t i = 0; i < H * W; ++i) REQUIRE(img[i] == Catch::Approx(v).margin(1e-9));
}

TEST_CASE("Parseval holds with halved-bin double counting") {
  const index_t H = 12, W = 10;  // even width: true Nyquist column
  Tensor64 x(Shape{2, 3, H, W});
  testutil::fill_rand(x, 77);
  Spectrum64 s = lce::rfft2_raw(x);
  const index_t W2 = W / 2 + 1;
  for (index_t bc = 0; bc < 6; ++bc) {
    double spec_energy = 0;
    for (index_t u = 0; u < H; ++u)
      for (index_t v = 0; v < W2; ++v) {
        const index_t i = (bc * H + u) * W2 + v;
        spec_energy += lce::spectrum_bin_weight(v, W) *
                       (s.real[i] * s.real[i] + s.imag[i] * s.imag[i]);
      }
    double pix_energy = 0;
    for (index_t i = 0; i < H * W; ++i) {
      const double p = x.data()[bc * H * W + i];
      pix_energy += p * p;
    }
    REQUIRE(spec_energy == Catch::Approx(H * W * pix_energy).epsilon(1e-5));
  }
}

TEST_CASE("transform is linear") {
  const index_t H = 9, W = 7;
  Tensor64 x(Shape{1, 1, H, W}), y(Shape{1, 1, H, W});
  testutil::fill_rand(x, 81);
  testutil::fill_rand(y, 82);
  const double a = 1.7, b = -0.45;
  Tensor64 z(Shape{1, 1, H, W});
  for (index_t i = 0; i < z.numel(); ++i) z[i] = a * x[i] + b * y[i];
  Spectrum64 sx = lce::rfft2_raw(x), sy = lce::rfft2_raw(y), sz = lce::rfft2_raw(z);
  for (index_t i = 0; i < sz.real.numel(); ++i) {
    REQUIRE(sz.real[i] == Catch::Approx(a * sx.real[i] + b * sy.real[i]).margin(1e-5));
    REQUIRE(sz.imag[i] == Catch::Approx(a * sx.imag[i] + b * sy.imag[i]).margin(1e-5));
  }
}

TEST_CASE("forward adjoint identity") {
  const index_t H = 8, W = 6;
  Tensor64 x(Shape{1, 2, H, W});
  testutil::fill_rand(x, 91);
  const index_t W2 = W / 2 + 1;
  Tensor64 yr(Shape{1, 2, H, W2}), yi(Shape{1, 2, H, W2});
  testutil::fill_rand(yr, 92);
  testutil::fill_rand(yi, 93);

  x.set_requires_grad(true);
  double lhs = 0;
  lce::Tape64 tape;
  {
    lce::Tape64::Scope scope(tape);
    Spectrum64 s = lce::rfft2(x);
    // <Ax, y> via taped ops so backward delivers A^T y
    auto loss = lce::add(lce::sum(lce::mul(s.real, yr)), lce::sum(lce::mul(s.imag, yi)));
    lhs = loss[0];
    tape.backward(loss);
  }
  double rhs = 0;
  for (index_t i = 0; i < x.numel(); ++i) rhs += x[i] * x.grad()[static_cast<size_t>(i)];
  REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-5));
}

TEST_CASE("inverse adjoint identity") {
  const index_t H = 6, W = 9;  // odd width
  const index_t W2 = W / 2 + 1;
  Spectrum64 s;
  s.real = Tensor64(Shape{1, 1, H, W2});
  s.imag = Tensor64(Shape{1, 1, H, W2});
  s.original_width = W;
  testutil::fill_rand(s.real, 94);
  testutil::fill_rand(s.imag, 95);
  Tensor64 y(Shape{1, 1, H, W});
  testutil::fill_rand(y, 96);

  s.real.set_requires_grad(true);
  s.imag.set_requires_grad(true);
  double lhs = 0;
  lce::Tape64 tape;
  {
    lce::Tape64::Scope scope(tape);
    Tensor64 img = lce::irfft2(s);
    auto loss = lce::sum(lce::mul(img, y));
    lhs = loss[0];
    tape.backward(loss);
  }
  double rhs = 0;
  for (index_t i = 0; i < s.real.numel(); ++i) {
    rhs += s.real[i] * s.real.grad()[static_cast<size_t>(i)];
    rhs += s.imag[i] * s.imag.grad()[static_cast<size_t>(i)];
  }
  REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-5));
}

TEST_CASE("gradient of roundtrip sum is all-ones") {
  Tensor64 x(Shape{1, 2, 6, 5});
  testutil::fill_rand(x, 101);
  x.set_requires_grad(true);
  lce::Tape64 tape;
  {
    lce::Tape64::Scope scope(tape);
    Spectrum64 s = lce::rfft2(x);
    tape.backward(lce::sum(lce::irfft2(s)));
  }
  for (double g : x.grad()) REQUIRE(g == Catch::Approx(1.0).margin(1e-4));
}

TEST_CASE("spectral gradients match finite differences") {
  const index_t H = 4, W = 6, W2 = W / 2 + 1;
  Tensor64 x(Shape{1, 1, H, W});
  testutil::fill_rand(x, 111);

  auto f_real = [](const Tensor64& t) { return testutil::readout(lce::rfft2(t).real); };
  auto f_imag = [](const Tensor64& t) { return testutil::readout(lce::rfft2(t).imag, 7); };
  auto f_round = [](const Tensor64& t) {
    return testutil::readout(lce::irfft2(lce::rfft2(t)), 13);
  };
  REQUIRE(testutil::grad_check(f_real, x) < 1e-5);
  REQUIRE(testutil::grad_check(f_imag, x) < 1e-5);
  REQUIRE(testutil::grad_check(f_round, x) < 1e-5);

  Tensor64 r0(Shape{1, 1, H, W2}), i0(Shape{1, 1, H, W2});
  testutil::fill_rand(r0, 112);
  testutil::fill_rand(i0, 113);
  auto f_ir = [&](const Tensor64& t) {
    Spectrum64 s{t, i0, W};
    return testutil::readout(lce::irfft2(s), 17);
  };
  auto f_ii = [&](const Tensor64& t) {
    Spectrum64 s{r0, t, W};
    return testutil::readout(lce::irfft2(s), 19);
  };
  REQUIRE(testutil::grad_check(f_ir, r0) < 1e-5);
  REQUIRE(testutil::grad_check(f_ii, i0) < 1e-5);
}

TEST_CASE("irfft2 rejects inconsistent width metadata") {
  Spectrum64 s;
  s.real = Tensor64(Shape{1, 1, 4, 4});
  s.imag = Tensor64(Shape{1, 1, 4, 4});
  s.original_width = 9;  // 9/2+1 = 5 != 4
  REQUIRE_THROWS_AS(lce::irfft2_raw(s), lce::Error);
}

TEST_CASE("dft_divide recovers ratios and guards zeros") {
  const index_t H = 6, W = 8;
  Tensor64 x(Shape{1, 1, H, W});
  testutil::fill_rand(x, 121, 0.5, 1.5);  // keep |D| well away from 0
  Spectrum64 d = lce::rfft2_raw(x);

  SECTION("D/D is one within the per-bin guard bound") {
    Spectrum64 q = lce::dft_divide(d, d);
    double max_mag2 = 0;
    for (index_t i = 0; i < d.real.numel(); ++i)
      max_mag2 = std::max(max_mag2, d.real[i] * d.real[i] + d.imag[i] * d.imag[i]);
    const double eps = 1e-8 * max_mag2;
    for (index_t i = 0; i < q.real.numel(); ++i) {
      const double mag2 = d.real[i] * d.real[i] + d.imag[i] * d.imag[i];
      const double bound = eps / (mag2 + eps) + 1e-9;
      REQUIRE(std::abs(q.real[i] - 1.0) <= bound);
      REQUIRE(std::abs(q.imag[i]) <= bound);
    }
  }
  SECTION("2D/D is two when |D| dwarfs eps") {
    // direct spectrum with every bin bounded away from zero
    Spectrum64 dd;
    dd.real = Tensor64(d.real.shape());
    dd.imag = Tensor64(d.imag.shape());
    dd.original_width = d.original_width;
    testutil::fill_rand(dd.real, 311, 0.5, 1.5);
    testutil::fill_rand(dd.imag, 312, 0.5, 1.5);
    Spectrum64 n;
    n.real = Tensor64(dd.real.shape());
    n.imag = Tensor64(dd.imag.shape());
    n.original_width = dd.original_width;
    for (index_t i = 0; i < n.real.numel(); ++i) {
      n.real[i] = 2.0 * dd.real[i];
      n.imag[i] = 2.0 * dd.imag[i];
    }
    Spectrum64 q = lce::dft_divide(n, dd);
    for (index_t i = 0; i < q.real.numel(); ++i) {
      REQUIRE(q.real[i] == Catch::Approx(2.0).margin(1e-3));
      REQUIRE(std::abs(q.imag[i]) < 1e-3);
    }
  }
  SECTION("zero denominator bin stays finite") {
    Spectrum64 dz = d;
    dz.real = d.real.clone();
    dz.imag = d.imag.clone();
    dz.real[3] = 0.0;
    dz.imag[3] = 0.0;
    Spectrum64 q = lce::dft_divide(d, dz, 1e-8);
    REQUIRE(q.real[3] == 0.0);
    REQUIRE(q.imag[3] == 0.0);
    for (index_t i = 0; i < q.real.numel(); ++i) {
      REQUIRE(std::isfinite(q.real[i]));
      REQUIRE(std::isfinite(q.imag[i]));
    }
  }
}
