#pragma once

// Independent O(N^2) full-grid DFT used as the oracle for the fast transforms
// (also exercised by the self-verification command). Deliberately shares no
// code with the FFT implementation: direct cos/sin accumulation in double.

#include <cmath>
#include <vector>

#include "lce/core.hpp"

namespace lce::testing {

struct FullSpectrum {
  std::vector<double> re, im;  // H*W each, row-major full grid
  index_t H = 0, W = 0;
};

inline FullSpectrum naive_dft2(const std::vector<double>& x, index_t H, index_t W) {
  LCE_CHECK(static_cast<index_t>(x.size()) == H * W, "naive_dft2 size mismatch");
  FullSpectrum s;
  s.H = H;
  s.W = W;
  s.re.assign(static_cast<size_t>(H * W), 0.0);
  s.im.assign(static_cast<size_t>(H * W), 0.0);
  const double pi = std::acos(-1.0);
  for (index_t u = 0; u < H; ++u)
    for (index_t v = 0; v < W; ++v) {
      double re = 0, im = 0;
      for (index_t h = 0; h < H; ++h)
        for (index_t w = 0; w < W; ++w) {
          const double ang = -2.0 * pi * (static_cast<double>(u) * h / H +
                                          static_cast<double>(v) * w / W);
          re += x[static_cast<size_t>(h * W + w)] * std::cos(ang);
          im += x[static_cast<size_t>(h * W + w)] * std::sin(ang);
        }
      s.re[static_cast<size_t>(u * W + v)] = re;
      s.im[static_cast<size_t>(u * W + v)] = im;
    }
  return s;
}

// full-grid inverse (normalized); returns the real part
inline std::vector<double> naive_idft2(const FullSpectrum& s) {
  const index_t H = s.H, W = s.W;
  std::vector<double> out(static_cast<size_t>(H * W), 0.0);
  const double pi = std::acos(-1.0);
  for (index_t h = 0; h < H; ++h)
    for (index_t w = 0; w < W; ++w) {
      double acc = 0;
      for (index_t u = 0; u < H; ++u)
        for (index_t v = 0; v < W; ++v) {
          const double ang = 2.0 * pi * (static_cast<double>(u) * h / H +
                                         static_cast<double>(v) * w / W);
          acc += s.re[static_cast<size_t>(u * W + v)] * std::cos(ang) -
                 s.im[static_cast<size_t>(u * W + v)] * std::sin(ang);
        }
      out[static_cast<size_t>(h * W + w)] = acc / (static_cast<double>(H) * W);
    }
  return out;
}

// expands a half spectrum (row-major H x (W/2+1)) to the full grid via
// conjugate symmetry F[u, W-v] = conj(F[(H-u) mod H, v])
inline FullSpectrum expand_half(const std::vector<double>& re, const std::vector<double>& im,
                                index_t H, index_t W) {
  const index_t W2 = W / 2 + 1;
  LCE_CHECK(static_cast<index_t>(re.size()) == H * W2, "expand_half size mismatch");
  FullSpectrum s;
  s.H = H;
  s.W = W;
  s.re.assign(static_cast<size_t>(H * W), 0.0);
  s.im.assign(static_cast<size_t>(H * W), 0.0);
  for (index_t u = 0; u < H; ++u)
    for (index_t v = 0; v < W; ++v) {
      if (v < W2) {
        s.re[static_cast<size_t>(u * W + v)] = re[static_cast<size_t>(u * W2 + v)];
        s.im[static_cast<size_t>(u * W + v)] = im[static_cast<size_t>(u * W2 + v)];
      } else {
        const index_t uu = (H - u) % H;
        const index_t vv = W - v;
        s.re[static_cast<size_t>(u * W + v)] = re[static_cast<size_t>(uu * W2 + vv)];
        s.im[static_cast<size_t>(u * W + v)] = -im[static_cast<size_t>(uu * W2 + vv)];
      }
    }
  return s;
}

}  // namespace lce::testing
