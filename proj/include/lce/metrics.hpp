#pragma once

// Evaluation protocol: PSNR / SSIM on the BT.601 studio-swing luma channel
// with an s-pixel border shave. Pure functions over [0,1]-ranged tensors.

#include <cmath>

#include "lce/tensor.hpp"

namespace lce {

// Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255, clipped to [0,1]
template <class T>
TensorT<T> rgb_to_y(const TensorT<T>& img) {
  LCE_CHECK(img.rank() == 4 && img.dim(1) == 3, "rgb_to_y expects [B,3,H,W], got ",
            shape_str(img.shape()));
  const index_t B = img.dim(0), H = img.dim(2), W = img.dim(3);
  TensorT<T> y(Shape{B, 1, H, W});
  for (index_t b = 0; b < B; ++b) {
    const T* r = img.data() + (b * 3 + 0) * H * W;
    const T* g = img.data() + (b * 3 + 1) * H * W;
    const T* bl = img.data() + (b * 3 + 2) * H * W;
    T* out = y.data() + b * H * W;
    for (index_t i = 0; i < H * W; ++i) {
      const double v = (65.481 * r[i] + 128.553 * g[i] + 24.966 * bl[i] + 16.0) / 255.0;
      out[i] = static_cast<T>(std::min(std::max(v, 0.0), 1.0));
    }
  }
  return y;
}

template <class T>
TensorT<T> shave_border(const TensorT<T>& x, index_t shave) {
  LCE_CHECK(x.rank() == 4, "shave_border expects BCHW");
  if (shave == 0) return x;
  const index_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  LCE_CHECK(2 * shave < H && 2 * shave < W, "shave ", shave, " too large for ", H, "x", W);
  const index_t H2 = H - 2 * shave, W2 = W - 2 * shave;
  TensorT<T> y(Shape{B, C, H2, W2});
  for (index_t bc = 0; bc < B * C; ++bc)
    for (index_t h = 0; h < H2; ++h)
      for (index_t w = 0; w < W2; ++w)
        y[(bc * H2 + h) * W2 + w] = x[(bc * H + h + shave) * W + w + shave];
  return y;
}

inline constexpr double kPsnrCapDb = 100.0;  // sentinel for identical inputs

// 10*log10(1 / MSE) over shaved images in [0,1]; capped at the sentinel
template <class T>
double psnr(const TensorT<T>& a, const TensorT<T>& b, index_t shave = 0) {
  LCE_CHECK(a.shape() == b.shape(), "psnr shape mismatch: ", shape_str(a.shape()),
            " vs ", shape_str(b.shape()));
  TensorT<T> as = shave_border(a, shave), bs = shave_border(b, shave);
  double mse = 0;
  for (index_t i = 0; i < as.numel(); ++i) {
    const double d = double(as[i]) - double(bs[i]);
    mse += d * d;
  }
  mse /= double(as.numel());
  if (mse <= 0) return kPsnrCapDb;
  return std::min(10.0 * std::log10(1.0 / mse), kPsnrCapDb);
}

namespace metricsdetail {

inline std::vector<double> gaussian_window(index_t n, double sigma) {
  std::vector<double> w(static_cast<size_t>(n));
  const index_t c = (n - 1) / 2;
  double total = 0;
  for (index_t i = 0; i < n; ++i) {
    const double d = double(i - c);
    w[size_t(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += w[size_t(i)];
  }
  for (double& v : w) v /= total;
  return w;
}

// separable valid-mode filtering of a single-channel plane
inline std::vector<double> filter_valid(const std::vector<double>& img, index_t H,
                                        index_t W, const std::vector<double>& win) {
  const index_t n = index_t(win.size());
  const index_t Hv = H - n + 1, Wv = W - n + 1;
  std::vector<double> mid(size_t(H * Wv)), out(size_t(Hv * Wv));
  for (index_t h = 0; h < H; ++h)
    for (index_t w = 0; w < Wv; ++w) {
      double acc = 0;
      for (index_t k = 0; k < n; ++k) acc += win[size_t(k)] * img[size_t(h * W + w + k)];
      mid[size_t(h * Wv + w)] = acc;
    }
  for (index_t h = 0; h < Hv; ++h)
    for (index_t w = 0; w < Wv; ++w) {
      double acc = 0;
      for (index_t k = 0; k < n; ++k) acc += win[size_t(k)] * mid[size_t((h + k) * Wv + w)];
      out[size_t(h * Wv + w)] = acc;
    }
  return out;
}

}  // namespace metricsdetail

// Mean local SSIM, 11x11 Gaussian window sigma=1.5, C1=0.01^2, C2=0.03^2,
// valid-mode windows, single channel.
template <class T>
double ssim(const TensorT<T>& a, const TensorT<T>& b) {
  LCE_CHECK(a.shape() == b.shape(), "ssim shape mismatch: ", shape_str(a.shape()),
            " vs ", shape_str(b.shape()));
  LCE_CHECK(a.rank() == 4 && a.dim(0) == 1 && a.dim(1) == 1,
            "ssim expects [1,1,H,W], got ", shape_str(a.shape()));
  const index_t H = a.dim(2), W = a.dim(3), win_n = 11;
  LCE_CHECK(H >= win_n && W >= win_n, "image ", H, "x", W, " smaller than the ",
            win_n, "x", win_n, " SSIM window");
  const auto win = metricsdetail::gaussian_window(win_n, 1.5);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  std::vector<double> x(size_t(H * W)), y(size_t(H * W)), xx(size_t(H * W)),
      yy(size_t(H * W)), xy(size_t(H * W));
  for (index_t i = 0; i < H * W; ++i) {
    x[size_t(i)] = double(a[i]);
    y[size_t(i)] = double(b[i]);
    xx[size_t(i)] = x[size_t(i)] * x[size_t(i)];
    yy[size_t(i)] = y[size_t(i)] * y[size_t(i)];
    xy[size_t(i)] = x[size_t(i)] * y[size_t(i)];
  }
  const auto mx = metricsdetail::filter_valid(x, H, W, win);
  const auto my = metricsdetail::filter_valid(y, H, W, win);
  const auto mxx = metricsdetail::filter_valid(xx, H, W, win);
  const auto myy = metricsdetail::filter_valid(yy, H, W, win);
  const auto mxy = metricsdetail::filter_valid(xy, H, W, win);

  double total = 0;
  for (size_t i = 0; i < mx.size(); ++i) {
    const double mu_x = mx[i], mu_y = my[i];
    const double var_x = mxx[i] - mu_x * mu_x;
    const double var_y = myy[i] - mu_y * mu_y;
    const double cov = mxy[i] - mu_x * mu_y;
    const double num = (2 * mu_x * mu_y + c1) * (2 * cov + c2);
    const double den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
    total += num / den;
  }
  return total / double(mx.size());
}

struct MetricResult {
  double psnr_db = 0;
  double ssim = 0;
  index_t shave = 0;
};

// the paper's protocol: both metrics on Y with an s-pixel shave
template <class T>
MetricResult evaluate_pair(const TensorT<T>& img, const TensorT<T>& ref, index_t shave) {
  MetricResult r;
  r.shave = shave;
  TensorT<T> ya = rgb_to_y(img), yb = rgb_to_y(ref);
  r.psnr_db = psnr(ya, yb, shave);
  r.ssim = ssim(shave_border(ya, shave), shave_border(yb, shave));
  return r;
}

}  // namespace lce
