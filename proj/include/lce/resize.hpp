#pragma once

// Separable bicubic resampling (Keys kernel, a = -0.5) with the standard
// anti-aliasing convention: when downscaling, the kernel support widens by
// the inverse scale. Not differentiable — used by degradation synthesis and
// the bicubic baseline, never inside a training graph.

#include <cmath>
#include <vector>

#include "lce/tensor.hpp"

namespace lce {

// Keys cubic convolution kernel
inline double cubic_weight(double t, double a = -0.5) {
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return a * (((t - 5.0) * t + 8.0) * t - 4.0);
  return 0.0;
}

namespace resample {

struct Tap {
  index_t start = 0;           // first source index (clamped contributions folded)
  std::vector<double> weights;  // normalized
};

// per-output-index taps along one axis; scale = out/in
inline std::vector<Tap> plan_axis(index_t in_n, index_t out_n, bool antialias) {
  const double scale = static_cast<double>(out_n) / static_cast<double>(in_n);
  const double filter_scale = (antialias && scale < 1.0) ? scale : 1.0;
  const double support = 2.0 / filter_scale;
  std::vector<Tap> taps(static_cast<size_t>(out_n));
  for (index_t i = 0; i < out_n; ++i) {
    const double center = (static_cast<double>(i) + 0.5) / scale - 0.5;
    index_t lo = static_cast<index_t>(std::ceil(center - support));
    index_t hi = static_cast<index_t>(std::floor(center + support));
    std::vector<double> w;
    std::vector<index_t> idx;
    double total = 0;
    for (index_t j = lo; j <= hi; ++j) {
      const double wv = cubic_weight((center - static_cast<double>(j)) * filter_scale);
      if (wv == 0.0) continue;
      w.push_back(wv);
      idx.push_back(std::min(std::max(j, index_t{0}), in_n - 1));  // clamp to edge
      total += wv;
    }
    LCE_CHECK(!w.empty() && total != 0.0, "degenerate resample tap at index ", i);
    Tap t;
    t.start = idx.front();
    // fold clamped duplicates into a dense run [start, last]
    const index_t last = idx.back();
    t.weights.assign(static_cast<size_t>(last - t.start + 1), 0.0);
    for (size_t k = 0; k < w.size(); ++k)
      t.weights[static_cast<size_t>(idx[k] - t.start)] += w[k] / total;
    taps[static_cast<size_t>(i)] = std::move(t);
  }
  return taps;
}

}  // namespace resample

// resample a BCHW tensor to explicit output extents
template <class T>
TensorT<T> bicubic_resize(const TensorT<T>& x, index_t out_h, index_t out_w,
                          bool antialias) {
  LCE_CHECK(x.rank() == 4, "bicubic_resize expects BCHW, got ", shape_str(x.shape()));
  LCE_CHECK(out_h >= 1 && out_w >= 1, "degenerate output size ", out_h, "x", out_w);
  const index_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto rows = resample::plan_axis(H, out_h, antialias);
  const auto cols = resample::plan_axis(W, out_w, antialias);

  // horizontal pass then vertical, accumulating in double
  TensorT<T> y(Shape{B, C, out_h, out_w});
  std::vector<double> mid(static_cast<size_t>(H * out_w));
  for (index_t bc = 0; bc < B * C; ++bc) {
    const T* src = x.data() + bc * H * W;
    for (index_t h = 0; h < H; ++h)
      for (index_t ow = 0; ow < out_w; ++ow) {
        const auto& t = cols[static_cast<size_t>(ow)];
        double acc = 0;
        for (size_t k = 0; k < t.weights.size(); ++k)
          acc += t.weights[k] * static_cast<double>(src[h * W + t.start + static_cast<index_t>(k)]);
        mid[static_cast<size_t>(h * out_w + ow)] = acc;
      }
    T* dst = y.data() + bc * out_h * out_w;
    for (index_t oh = 0; oh < out_h; ++oh) {
      const auto& t = rows[static_cast<size_t>(oh)];
      for (index_t ow = 0; ow < out_w; ++ow) {
        double acc = 0;
        for (size_t k = 0; k < t.weights.size(); ++k)
          acc += t.weights[k] *
                 mid[static_cast<size_t>((t.start + static_cast<index_t>(k)) * out_w + ow)];
        dst[oh * out_w + ow] = static_cast<T>(acc);
      }
    }
  }
  check_finite(y, "bicubic_resize");
  return y;
}

// rational-scale convenience: out extents = in * num / den (must divide)
template <class T>
TensorT<T> bicubic_scale(const TensorT<T>& x, index_t num, index_t den, bool antialias) {
  LCE_CHECK(num >= 1 && den >= 1, "bad rational scale ", num, "/", den);
  const index_t H = x.dim(2), W = x.dim(3);
  LCE_CHECK((H * num) % den == 0 && (W * num) % den == 0,
            "extents ", H, "x", W, " not divisible for scale ", num, "/", den);
  return bicubic_resize(x, H * num / den, W * num / den, antialias);
}

template <class T>
void clip01(TensorT<T>& t) {
  for (index_t i = 0; i < t.numel(); ++i)
    t[i] = std::min(std::max(t[i], T(0)), T(1));
}

}  // namespace lce
