#pragma once

// Direct-sum circular convolution, used as an oracle against the spectral
// path. Deliberately naive; shares nothing with blur() or the FFT stack.

#include <vector>

#include "lce/tensor.hpp"

namespace lce::testing {

// y[p] = sum_q k[q] * img[(p + center - q) mod N], kernel center at (cy, cx)
template <class T>
TensorT<T> naive_circular_conv2(const TensorT<T>& img, const TensorT<T>& kernel,
                                index_t cy, index_t cx) {
  LCE_CHECK(img.rank() == 2 && kernel.rank() == 2, "rank-2 inputs expected");
  const index_t H = img.dim(0), W = img.dim(1);
  const index_t kh = kernel.dim(0), kw = kernel.dim(1);
  TensorT<T> y(img.shape());
  for (index_t h = 0; h < H; ++h)
    for (index_t w = 0; w < W; ++w) {
      double acc = 0;
      for (index_t qy = 0; qy < kh; ++qy)
        for (index_t qx = 0; qx < kw; ++qx) {
          const index_t sy = (((h + cy - qy) % H) + H) % H;
          const index_t sx = (((w + cx - qx) % W) + W) % W;
          acc += static_cast<double>(kernel[qy * kw + qx]) *
                 static_cast<double>(img[sy * W + sx]);
        }
      y[h * W + w] = static_cast<T>(acc);
    }
  return y;
}

}  // namespace lce::testing
