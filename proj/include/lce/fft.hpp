#pragma once

// Differentiable 2-D real FFT / inverse over BCHW tensors, plus the guarded
// complex division used for effective-kernel estimation. Half-spectrum
// storage: width extent floor(W/2)+1, conjugate symmetry implied. All
// transform arithmetic runs in complex<double> regardless of tensor type.

#include <complex>
#include <vector>

#include "lce/ops.hpp"
#include "lce/tape.hpp"
#include "lce/tensor.hpp"

namespace lce {

namespace fftdetail {

using cplx = std::complex<double>;

inline int smallest_prime_factor(int n) {
  for (int p = 2; p * p <= n; ++p)
    if (n % p == 0) return p;
  return n;
}

// mixed-radix Cooley-Tukey, out-of-place recursion; prime sizes fall back to
// the O(p^2) combine naturally (m = 1)
inline void fft1d(std::vector<cplx>& a, bool inverse) {
  const int n = static_cast<int>(a.size());
  if (n <= 1) return;
  const int p = smallest_prime_factor(n);
  const int m = n / p;
  const double sign = inverse ? 2.0 : -2.0;  // kernel exp(sign*pi*i*...)

  std::vector<cplx> sub(static_cast<size_t>(m));
  std::vector<std::vector<cplx>> parts(static_cast<size_t>(p));
  for (int r = 0; r < p; ++r) {
    for (int j = 0; j < m; ++j) sub[static_cast<size_t>(j)] = a[static_cast<size_t>(j * p + r)];
    fft1d(sub, inverse);
    parts[static_cast<size_t>(r)] = sub;
  }
  constexpr double pi = 3.14159265358979323846;
  for (int q = 0; q < m; ++q)
    for (int t = 0; t < p; ++t) {
      cplx acc = 0;
      for (int r = 0; r < p; ++r) {
        const double angle =
            sign * pi * (static_cast<double>(q) * r / n + static_cast<double>(t) * r / p);
        acc += parts[static_cast<size_t>(r)][static_cast<size_t>(q)] *
               std::polar(1.0, angle);
      }
      a[static_cast<size_t>(q + t * m)] = acc;
    }
}

// forward half-spectrum transform of one HxW real channel; out has H*W2 pairs
template <class T>
void rfft2_channel(const T* x, index_t H, index_t W, double* out_re, double* out_im) {
  const index_t W2 = W / 2 + 1;
  std::vector<cplx> rows(static_cast<size_t>(H * W2));
  std::vector<cplx> buf(static_cast<size_t>(W));
  for (index_t h = 0; h < H; ++h) {
    for (index_t w = 0; w < W; ++w)
      buf[static_cast<size_t>(w)] = cplx(static_cast<double>(x[h * W + w]), 0.0);
    fft1d(buf, false);
    for (index_t v = 0; v < W2; ++v)
      rows[static_cast<size_t>(h * W2 + v)] = buf[static_cast<size_t>(v)];
  }
  std::vector<cplx> col(static_cast<size_t>(H));
  for (index_t v = 0; v < W2; ++v) {
    for (index_t h = 0; h < H; ++h) col[static_cast<size_t>(h)] = rows[static_cast<size_t>(h * W2 + v)];
    fft1d(col, false);
    for (index_t u = 0; u < H; ++u) {
      out_re[u * W2 + v] = col[static_cast<size_t>(u)].real();
      out_im[u * W2 + v] = col[static_cast<size_t>(u)].imag();
    }
  }
}

// inverse of one channel; symmetric=true completes the full row spectrum by
// conjugate symmetry (true inverse), false zero-fills the missing half (the
// forward-transform adjoint). normalize divides by H*W.
template <class T>
void ihalf2_channel(const double* re, const double* im, index_t H, index_t W,
                    bool symmetric, bool normalize, T* out) {
  const index_t W2 = W / 2 + 1;
  std::vector<cplx> work(static_cast<size_t>(H * W2));
  std::vector<cplx> col(static_cast<size_t>(H));
  for (index_t v = 0; v < W2; ++v) {
    for (index_t h = 0; h < H; ++h)
      col[static_cast<size_t>(h)] = cplx(re[h * W2 + v], im[h * W2 + v]);
    fft1d(col, true);
    for (index_t h = 0; h < H; ++h) work[static_cast<size_t>(h * W2 + v)] = col[static_cast<size_t>(h)];
  }
  std::vector<cplx> row(static_cast<size_t>(W));
  const double scale = normalize ? 1.0 / (static_cast<double>(H) * static_cast<double>(W)) : 1.0;
  for (index_t h = 0; h < H; ++h) {
    for (index_t v = 0; v < W2; ++v) row[static_cast<size_t>(v)] = work[static_cast<size_t>(h * W2 + v)];
    for (index_t v = W2; v < W; ++v) {
      if (symmetric)
        row[static_cast<size_t>(v)] = std::conj(row[static_cast<size_t>(W - v)]);
      else
        row[static_cast<size_t>(v)] = 0.0;
    }
    fft1d(row, true);
    for (index_t w = 0; w < W; ++w)
      out[h * W + w] = static_cast<T>(row[static_cast<size_t>(w)].real() * scale);
  }
}

}  // namespace fftdetail

// Half-spectrum of a real BCHW tensor: real/imag are B x C x H x (W/2+1).
template <class T>
struct SpectrumT {
  TensorT<T> real;
  TensorT<T> imag;
  index_t original_width = 0;
};

using Spectrum = SpectrumT<float>;
using Spectrum64 = SpectrumT<double>;

// interior half-spectrum bins stand in for their conjugate twins; edge bins
// (v=0, and v=W/2 for even W) are their own twin
inline double spectrum_bin_weight(index_t v, index_t W) {
  if (v == 0) return 1.0;
  if (W % 2 == 0 && v == W / 2) return 1.0;
  return 2.0;
}

// ---- raw (untaped) transforms ----

template <class T>
SpectrumT<T> rfft2_raw(const TensorT<T>& x) {
  LCE_CHECK(x.rank() == 4, "rfft2 expects BCHW, got ", shape_str(x.shape()));
  const index_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  LCE_CHECK(H >= 1 && W >= 1, "rfft2 needs nonempty spatial extents");
  const index_t W2 = W / 2 + 1;
  SpectrumT<T> s;
  s.real = TensorT<T>(Shape{B, C, H, W2});
  s.imag = TensorT<T>(Shape{B, C, H, W2});
  s.original_width = W;
  std::vector<double> re(static_cast<size_t>(H * W2)), im(static_cast<size_t>(H * W2));
  for (index_t bc = 0; bc < B * C; ++bc) {
    fftdetail::rfft2_channel(x.data() + bc * H * W, H, W, re.data(), im.data());
    for (index_t i = 0; i < H * W2; ++i) {
      s.real.data()[bc * H * W2 + i] = static_cast<T>(re[static_cast<size_t>(i)]);
      s.imag.data()[bc * H * W2 + i] = static_cast<T>(im[static_cast<size_t>(i)]);
    }
  }
  return s;
}

namespace fftdetail {

// shared driver for the two inverse flavors over a BCHW batch
template <class T>
TensorT<T> inverse_batch(const TensorT<T>& real, const TensorT<T>& imag, index_t W,
                         bool symmetric, bool normalize) {
  const index_t B = real.dim(0), C = real.dim(1), H = real.dim(2), W2 = real.dim(3);
  LCE_CHECK(W2 == W / 2 + 1, "spectrum width ", W2, " inconsistent with original width ", W);
  LCE_CHECK(imag.same_shape(real), "real/imag shape mismatch");
  TensorT<T> out(Shape{B, C, H, W});
  std::vector<double> re(static_cast<size_t>(H * W2)), im(static_cast<size_t>(H * W2));
  for (index_t bc = 0; bc < B * C; ++bc) {
    for (index_t i = 0; i < H * W2; ++i) {
      re[static_cast<size_t>(i)] = static_cast<double>(real.data()[bc * H * W2 + i]);
      im[static_cast<size_t>(i)] = static_cast<double>(imag.data()[bc * H * W2 + i]);
    }
    ihalf2_channel(re.data(), im.data(), H, W, symmetric, normalize,
                   out.data() + bc * H * W);
  }
  return out;
}

}  // namespace fftdetail

template <class T>
TensorT<T> irfft2_raw(const SpectrumT<T>& s) {
  return fftdetail::inverse_batch(s.real, s.imag, s.original_width, true, true);
}

// ---- taped transforms ----

template <class T>
SpectrumT<T> rfft2(const TensorT<T>& x) {
  SpectrumT<T> s = rfft2_raw(x);
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      const index_t W = s.original_width;
      // adjoint of the real map alone: zero-filled unnormalized inverse of
      // (g_R + 0i); of the imag map: same with (0 + i g_I)
      tp->record(s.real, {px}, [W](const TensorT<T>& g) {
        TensorT<T> zero(g.shape());
        return std::vector<TensorT<T>>{
            fftdetail::inverse_batch(g, zero, W, false, false)};
      });
      tp->record(s.imag, {px}, [W](const TensorT<T>& g) {
        TensorT<T> zero(g.shape());
        return std::vector<TensorT<T>>{
            fftdetail::inverse_batch(zero, g, W, false, false)};
      });
    }
  }
  check_finite(s.real, "rfft2");
  check_finite(s.imag, "rfft2");
  return s;
}

template <class T>
TensorT<T> irfft2(const SpectrumT<T>& s) {
  TensorT<T> y = irfft2_raw(s);
  if (auto* tp = TapeT<T>::current()) {
    int pr = tp->track(s.real), pi = tp->track(s.imag);
    if (tp->any_tracked({pr, pi})) {
      const index_t W = s.original_width;
      tp->record(y, {pr, pi}, [W](const TensorT<T>& g) {
        // d/dR = m_v/(HW) * Re rfft2(g); d/dI = m_v/(HW) * Im rfft2(g)
        SpectrumT<T> f = rfft2_raw(g);
        const index_t H = g.dim(2);
        const index_t W2 = W / 2 + 1;
        const index_t BC = g.dim(0) * g.dim(1);
        const double inv_hw = 1.0 / (static_cast<double>(H) * static_cast<double>(W));
        TensorT<T> gr(f.real.shape()), gi(f.imag.shape());
        for (index_t bc = 0; bc < BC; ++bc)
          for (index_t u = 0; u < H; ++u)
            for (index_t v = 0; v < W2; ++v) {
              const index_t i = (bc * H + u) * W2 + v;
              const double m = spectrum_bin_weight(v, W) * inv_hw;
              gr[i] = static_cast<T>(f.real[i] * m);
              gi[i] = static_cast<T>(f.imag[i] * m);
            }
        return std::vector<TensorT<T>>{gr, gi};
      });
    }
  }
  check_finite(y, "irfft2");
  return y;
}

// Guarded complex ratio N * conj(D) / (|D|^2 + eps), the deconvolution step of
// effective-kernel estimation. eps is relative to max |D|^2 (analysis path,
// not differentiable).
template <class T>
SpectrumT<T> dft_divide(const SpectrumT<T>& num, const SpectrumT<T>& den,
                        double eps_rel = 1e-8) {
  LCE_CHECK(num.real.same_shape(den.real), "dft_divide shape mismatch: ",
            shape_str(num.real.shape()), " vs ", shape_str(den.real.shape()));
  LCE_CHECK(num.original_width == den.original_width, "dft_divide width mismatch");
  double max_mag2 = 0;
  for (index_t i = 0; i < den.real.numel(); ++i) {
    const double dr = den.real[i], di = den.imag[i];
    max_mag2 = std::max(max_mag2, dr * dr + di * di);
  }
  const double eps = eps_rel * std::max(max_mag2, 1e-30);
  SpectrumT<T> out;
  out.real = TensorT<T>(num.real.shape());
  out.imag = TensorT<T>(num.imag.shape());
  out.original_width = num.original_width;
  for (index_t i = 0; i < num.real.numel(); ++i) {
    const double nr = num.real[i], ni = num.imag[i];
    const double dr = den.real[i], di = den.imag[i];
    const double w = 1.0 / (dr * dr + di * di + eps);
    out.real[i] = static_cast<T>((nr * dr + ni * di) * w);
    out.imag[i] = static_cast<T>((ni * dr - nr * di) * w);
  }
  check_finite(out.real, "dft_divide");
  check_finite(out.imag, "dft_divide");
  return out;
}

}  // namespace lce
