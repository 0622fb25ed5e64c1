#pragma once

// Degradation synthesis: Gaussian blur kernels, true convolution with
// reflect/circular boundaries, the blur -> bicubic-downsample -> noise ->
// clip pipeline, and recovery of the effective low-resolution kernel by
// spectral division. Everything here is untaped.

#include <cmath>
#include <utility>
#include <vector>

#include "lce/fft.hpp"
#include "lce/ops.hpp"
#include "lce/resize.hpp"
#include "lce/rng.hpp"
#include "lce/tensor.hpp"

namespace lce {

enum class KernelKind { kIsotropic, kAnisotropic };

struct GaussianKernelSpec {
  KernelKind kind = KernelKind::kIsotropic;
  index_t size = 21;      // odd
  double sigma = 1.0;     // isotropic std-dev
  double lambda1 = 1.0;   // anisotropic eigen-variances and rotation
  double lambda2 = 1.0;
  double theta = 0.0;     // radians
};

// Gaussian density sampled on the integer grid, L1-normalized.
template <class T = double>
TensorT<T> render_kernel(const GaussianKernelSpec& spec) {
  LCE_CHECK(spec.size >= 1 && spec.size % 2 == 1, "kernel size must be odd, got ",
            spec.size);
  const index_t n = spec.size, c = (n - 1) / 2;
  std::vector<double> k(static_cast<size_t>(n * n));
  double total = 0;
  if (spec.kind == KernelKind::kIsotropic) {
    LCE_CHECK(spec.sigma > 0, "sigma must be positive, got ", spec.sigma);
    const double inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
    for (index_t y = 0; y < n; ++y)
      for (index_t x = 0; x < n; ++x) {
        const double dy = static_cast<double>(y - c), dx = static_cast<double>(x - c);
        const double v = std::exp(-(dx * dx + dy * dy) * inv);
        k[static_cast<size_t>(y * n + x)] = v;
        total += v;
      }
  } else {
    LCE_CHECK(spec.lambda1 > 0 && spec.lambda2 > 0, "eigen-variances must be positive");
    const double ct = std::cos(spec.theta), st = std::sin(spec.theta);
    for (index_t y = 0; y < n; ++y)
      for (index_t x = 0; x < n; ++x) {
        const double dy = static_cast<double>(y - c), dx = static_cast<double>(x - c);
        const double u = ct * dx + st * dy;    // coords in the eigenbasis
        const double v = -st * dx + ct * dy;
        const double q = u * u / spec.lambda1 + v * v / spec.lambda2;
        const double w = std::exp(-0.5 * q);
        k[static_cast<size_t>(y * n + x)] = w;
        total += w;
      }
  }
  TensorT<T> out(Shape{n, n});
  for (index_t i = 0; i < n * n; ++i)
    out[i] = static_cast<T>(k[static_cast<size_t>(i)] / total);
  return out;
}

template <class T = double>
TensorT<T> delta_kernel(index_t size) {
  LCE_CHECK(size >= 1 && size % 2 == 1, "kernel size must be odd, got ", size);
  TensorT<T> k(Shape{size, size});
  k[((size - 1) / 2) * size + (size - 1) / 2] = T(1);
  return k;
}

enum class Boundary { kReflect, kCircular };

// True convolution (kernel flipped), same-size output, per channel.
template <class T>
TensorT<T> blur(const TensorT<T>& x, const TensorT<T>& kernel, Boundary boundary) {
  LCE_CHECK(x.rank() == 4, "blur expects BCHW, got ", shape_str(x.shape()));
  LCE_CHECK(kernel.rank() == 2, "blur kernel must be rank 2, got ",
            shape_str(kernel.shape()));
  const index_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const index_t kh = kernel.dim(0), kw = kernel.dim(1);
  LCE_CHECK(kh % 2 == 1 && kw % 2 == 1, "blur kernel extents must be odd");
  const index_t cy = (kh - 1) / 2, cx = (kw - 1) / 2;

  TensorT<T> y(x.shape());
  // y[p] = sum_q k[q] * x[p + center - q]
  for (index_t bc = 0; bc < B * C; ++bc) {
    const T* src = x.data() + bc * H * W;
    T* dst = y.data() + bc * H * W;
    for (index_t h = 0; h < H; ++h)
      for (index_t w = 0; w < W; ++w) {
        double acc = 0;
        for (index_t qy = 0; qy < kh; ++qy)
          for (index_t qx = 0; qx < kw; ++qx) {
            index_t sy = h + cy - qy, sx = w + cx - qx;
            if (boundary == Boundary::kCircular) {
              sy = ((sy % H) + H) % H;
              sx = ((sx % W) + W) % W;
            } else {
              sy = detail::reflect_index(sy, H);
              sx = detail::reflect_index(sx, W);
            }
            acc += static_cast<double>(kernel[qy * kw + qx]) *
                   static_cast<double>(src[sy * W + sx]);
          }
        dst[h * W + w] = static_cast<T>(acc);
      }
  }
  check_finite(y, "blur");
  return y;
}

template <class T>
struct DegradeResultT {
  TensorT<T> lr;      // blur -> bicubic down -> noise -> clip
  TensorT<T> clr_gt;  // bicubic down -> clip (no blur, no noise)
};

// HR image in [0,1] -> paired LR / corrected-LR ground truth.
template <class T>
DegradeResultT<T> degrade(const TensorT<T>& hr, const TensorT<T>& kernel,
                          index_t scale, double noise_sigma, std::uint64_t seed) {
  LCE_CHECK(hr.rank() == 4, "degrade expects BCHW, got ", shape_str(hr.shape()));
  LCE_CHECK(scale >= 1, "scale must be >= 1, got ", scale);
  const index_t H = hr.dim(2), W = hr.dim(3);
  LCE_CHECK(H % scale == 0 && W % scale == 0, "extents ", H, "x", W,
            " not divisible by scale ", scale);
  LCE_CHECK(noise_sigma >= 0, "noise sigma must be non-negative");

  DegradeResultT<T> out;
  TensorT<T> blurred = blur(hr, kernel, Boundary::kReflect);
  out.lr = bicubic_resize(blurred, H / scale, W / scale, /*antialias=*/true);
  if (noise_sigma > 0) {
    Rng rng(seed);
    for (index_t i = 0; i < out.lr.numel(); ++i)
      out.lr[i] += static_cast<T>(noise_sigma * rng.normal());
  }
  clip01(out.lr);
  out.clr_gt = bicubic_resize(hr, H / scale, W / scale, /*antialias=*/true);
  clip01(out.clr_gt);
  return out;
}

// Effective LR-domain kernel: spectral division of the noise-free circular
// degradation of x by the plain bicubic downsample of x, averaged over
// channels, circularly centered. Output is [H/scale, W/scale].
template <class T>
TensorT<T> effective_kernel_l(const TensorT<T>& x, const TensorT<T>& kernel,
                              index_t scale, double eps_rel = 1e-8) {
  LCE_CHECK(x.rank() == 4 && x.dim(0) == 1, "effective_kernel_l expects 1CHW, got ",
            shape_str(x.shape()));
  const index_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
  LCE_CHECK(H % scale == 0 && W % scale == 0, "extents not divisible by scale");
  const index_t hs = H / scale, ws = W / scale;

  TensorT<T> y_s = bicubic_resize(blur(x, kernel, Boundary::kCircular), hs, ws, true);
  TensorT<T> x_s = bicubic_resize(x, hs, ws, true);
  T peak = T(0);
  for (index_t i = 0; i < x_s.numel(); ++i) peak = std::max(peak, std::abs(x_s[i]));
  LCE_CHECK(peak > T(0), "reference image has an identically zero spectrum");

  TensorT<T> acc(Shape{1, 1, hs, ws});
  TensorT<T> ychan(Shape{1, 1, hs, ws}), xchan(Shape{1, 1, hs, ws});
  for (index_t c = 0; c < C; ++c) {
    for (index_t i = 0; i < hs * ws; ++i) {
      ychan[i] = y_s[c * hs * ws + i];
      xchan[i] = x_s[c * hs * ws + i];
    }
    SpectrumT<T> div = dft_divide(rfft2_raw(ychan), rfft2_raw(xchan), eps_rel);
    TensorT<T> k_c = irfft2_raw(div);
    for (index_t i = 0; i < hs * ws; ++i) acc[i] += k_c[i];
  }
  const T inv_c = T(1) / static_cast<T>(C);
  for (index_t i = 0; i < hs * ws; ++i) acc[i] *= inv_c;

  // origin bin -> geometric center
  TensorT<T> centered = roll2d_raw(acc, hs / 2, ws / 2);
  return centered.reshaped(Shape{hs, ws});
}

}  // namespace lce
