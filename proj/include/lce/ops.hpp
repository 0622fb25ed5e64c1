#pragma once

// Differentiable operation set for the LCE networks: convolution, linear,
// layer norm, activations, pooling, pixel shuffle, window partitioning and
// the handful of broadcast patterns the blocks need. Every op is a pure
// function; when a tape is active and an input is tracked, the op records
// a backward closure capturing its inputs by value.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <utility>
#include <vector>

#include "lce/tape.hpp"
#include "lce/tensor.hpp"

namespace lce {

enum class PadKind { kZero, kReflect };

namespace detail {

inline std::vector<index_t> strides_of(const Shape& s) {
  std::vector<index_t> st(s.size());
  index_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

// ---- small GEMM kernels (row-major, accumulate into C) ----

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(index_t M, index_t N, index_t K, const T* A, const T* B, T* C) {
  for (index_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    const T* a = A + i * K;
    index_t k = 0;
    // four B rows per pass so each C element is touched K/4 times
    for (; k + 4 <= K; k += 4) {
      const T a0 = a[k], a1 = a[k + 1], a2 = a[k + 2], a3 = a[k + 3];
      const T* b0 = B + k * N;
      const T* b1 = b0 + N;
      const T* b2 = b1 + N;
      const T* b3 = b2 + N;
      for (index_t j = 0; j < N; ++j)
        c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (; k < K; ++k) {
      const T av = a[k];
      const T* b = B + k * N;
      for (index_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(index_t M, index_t N, index_t K, const T* A, const T* B, T* C) {
  if (M >= 4 && N >= 4) {
    // the dot form defeats vectorization; transpose once and stream instead
    std::vector<T> bt(static_cast<size_t>(K * N));
    for (index_t j = 0; j < N; ++j) {
      const T* src = B + j * K;
      for (index_t k = 0; k < K; ++k) bt[static_cast<size_t>(k * N + j)] = src[k];
    }
    gemm_nn(M, N, K, A, bt.data(), C);
    return;
  }
  for (index_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    T* c = C + i * N;
    for (index_t j = 0; j < N; ++j) {
      const T* b = B + j * K;
      T acc = 0;
      for (index_t k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] += acc;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(index_t M, index_t N, index_t K, const T* A, const T* B, T* C) {
  for (index_t k = 0; k < K; ++k) {
    const T* a = A + k * M;
    const T* b = B + k * N;
    for (index_t i = 0; i < M; ++i) {
      const T av = a[i];
      T* c = C + i * N;
      for (index_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// ---- im2col / col2im (single image, CHW) ----

template <class T>
void im2col(const T* x, index_t C, index_t H, index_t W, index_t kh, index_t kw,
            index_t stride, T* col) {
  const index_t oh = (H - kh) / stride + 1;
  const index_t ow = (W - kw) / stride + 1;
  index_t row = 0;
  for (index_t c = 0; c < C; ++c)
    for (index_t dy = 0; dy < kh; ++dy)
      for (index_t dx = 0; dx < kw; ++dx, ++row) {
        T* dst = col + row * (oh * ow);
        const T* src = x + c * H * W;
        for (index_t y = 0; y < oh; ++y) {
          const T* s = src + (y * stride + dy) * W + dx;
          if (stride == 1) {
            std::memcpy(dst + y * ow, s, sizeof(T) * static_cast<size_t>(ow));
          } else {
            for (index_t xx = 0; xx < ow; ++xx) dst[y * ow + xx] = s[xx * stride];
          }
        }
      }
}

template <class T>
void col2im(const T* col, index_t C, index_t H, index_t W, index_t kh, index_t kw,
            index_t stride, T* x) {
  const index_t oh = (H - kh) / stride + 1;
  const index_t ow = (W - kw) / stride + 1;
  index_t row = 0;
  for (index_t c = 0; c < C; ++c)
    for (index_t dy = 0; dy < kh; ++dy)
      for (index_t dx = 0; dx < kw; ++dx, ++row) {
        const T* src = col + row * (oh * ow);
        T* dst = x + c * H * W;
        for (index_t y = 0; y < oh; ++y) {
          T* d = dst + (y * stride + dy) * W + dx;
          for (index_t xx = 0; xx < ow; ++xx) d[xx * stride] += src[y * ow + xx];
        }
      }
}

// Half-sample symmetric index mapping: ... b a | a b c | c b ...
inline index_t reflect_index(index_t i, index_t n) {
  if (n == 1) return 0;
  const index_t period = 2 * n;
  i = ((i % period) + period) % period;
  return i < n ? i : period - 1 - i;
}

template <class T>
TensorT<T> unary_like(const TensorT<T>& x) {
  return TensorT<T>(x.shape());
}

}  // namespace detail

// ------------------------------------------------------------------
// elementwise
// ------------------------------------------------------------------

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  LCE_CHECK(a.same_shape(b), "add shape mismatch ", shape_str(a.shape()), " vs ",
            shape_str(b.shape()));
  TensorT<T> y(a.shape());
  const index_t n = y.numel();
  for (index_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
  if (auto* tp = TapeT<T>::current()) {
    int pa = tp->track(a), pb = tp->track(b);
    if (tp->any_tracked({pa, pb}))
      tp->record(y, {pa, pb},
                 [](const TensorT<T>& g) { return std::vector<TensorT<T>>{g.clone(), g.clone()}; });
  }
  check_finite(y, "add");
  return y;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  LCE_CHECK(a.same_shape(b), "sub shape mismatch ", shape_str(a.shape()), " vs ",
            shape_str(b.shape()));
  TensorT<T> y(a.shape());
  const index_t n = y.numel();
  for (index_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
  if (auto* tp = TapeT<T>::current()) {
    int pa = tp->track(a), pb = tp->track(b);
    if (tp->any_tracked({pa, pb}))
      tp->record(y, {pa, pb}, [](const TensorT<T>& g) {
        TensorT<T> gb(g.shape());
        for (index_t i = 0; i < g.numel(); ++i) gb[i] = -g[i];
        return std::vector<TensorT<T>>{g.clone(), gb};
      });
  }
  check_finite(y, "sub");
  return y;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  LCE_CHECK(a.same_shape(b), "mul shape mismatch ", shape_str(a.shape()), " vs ",
            shape_str(b.shape()));
  TensorT<T> y(a.shape());
  const index_t n = y.numel();
  for (index_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
  if (auto* tp = TapeT<T>::current()) {
    int pa = tp->track(a), pb = tp->track(b);
    if (tp->any_tracked({pa, pb})) {
      std::vector<T> av = a.vec(), bv = b.vec();
      tp->record(y, {pa, pb}, [av, bv](const TensorT<T>& g) {
        TensorT<T> ga(g.shape()), gb(g.shape());
        for (index_t i = 0; i < g.numel(); ++i) {
          ga[i] = g[i] * bv[static_cast<size_t>(i)];
          gb[i] = g[i] * av[static_cast<size_t>(i)];
        }
        return std::vector<TensorT<T>>{ga, gb};
      });
    }
  }
  check_finite(y, "mul");
  return y;
}

template <class T>
TensorT<T> mul_scalar(const TensorT<T>& x, T s) {
  TensorT<T> y(x.shape());
  for (index_t i = 0; i < x.numel(); ++i) y[i] = x[i] * s;
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0)
      tp->record(y, {px}, [s](const TensorT<T>& g) {
        TensorT<T> gx(g.shape());
        for (index_t i = 0; i < g.numel(); ++i) gx[i] = g[i] * s;
        return std::vector<TensorT<T>>{gx};
      });
  }
  check_finite(y, "mul_scalar");
  return y;
}

template <class T>
TensorT<T> add_scalar(const TensorT<T>& x, T s) {
  TensorT<T> y(x.shape());
  for (index_t i = 0; i < x.numel(); ++i) y[i] = x[i] + s;
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0)
      tp->record(y, {px},
                 [](const TensorT<T>& g) { return std::vector<TensorT<T>>{g.clone()}; });
  }
  check_finite(y, "add_scalar");
  return y;
}

// y = alpha * x with a learnable 1-element alpha (the FSAB weighting scalar)
template <class T>
TensorT<T> scale_by(const TensorT<T>& x, const TensorT<T>& alpha) {
  LCE_CHECK(alpha.numel() == 1, "scale_by expects a 1-element scale");
  const T a = alpha[0];
  TensorT<T> y(x.shape());
  for (index_t i = 0; i < x.numel(); ++i) y[i] = x[i] * a;
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x), pa = tp->track(alpha);
    if (tp->any_tracked({px, pa})) {
      std::vector<T> xv = x.vec();
      tp->record(y, {px, pa}, [xv, a](const TensorT<T>& g) {
        TensorT<T> gx(g.shape());
        T ga = 0;
        for (index_t i = 0; i < g.numel(); ++i) {
          gx[i] = g[i] * a;
          ga += g[i] * xv[static_cast<size_t>(i)];
        }
        return std::vector<TensorT<T>>{gx, TensorT<T>::scalar(ga)};
      });
    }
  }
  check_finite(y, "scale_by");
  return y;
}

// ------------------------------------------------------------------
// activations
// ------------------------------------------------------------------

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> y(x.shape());
  for (index_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      std::vector<T> xv = x.vec();
      tp->record(y, {px}, [xv](const TensorT<T>& g) {
        TensorT<T> gx(g.shape());
        for (index_t i = 0; i < g.numel(); ++i)
          gx[i] = xv[static_cast<size_t>(i)] > T(0) ? g[i] : T(0);
        return std::vector<TensorT<T>>{gx};
      });
    }
  }
  check_finite(y, "relu");
  return y;
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  TensorT<T> y(x.shape());
  for (index_t i = 0; i < x.numel(); ++i)
    y[i] = T(1) / (T(1) + std::exp(-x[i]));
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      std::vector<T> yv = y.vec();
      tp->record(y, {px}, [yv](const TensorT<T>& g) {
        TensorT<T> gx(g.shape());
        for (index_t i = 0; i < g.numel(); ++i) {
          const T s = yv[static_cast<size_t>(i)];
          gx[i] = g[i] * s * (T(1) - s);
        }
        return std::vector<TensorT<T>>{gx};
      });
    }
  }
  check_finite(y, "sigmoid");
  return y;
}

template <class T>
TensorT<T> gelu(const TensorT<T>& x) {
  // exact form, 0.5 x (1 + erf(x / sqrt 2))
  TensorT<T> y(x.shape());
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (index_t i = 0; i < x.numel(); ++i) {
    const double v = static_cast<double>(x[i]);
    y[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      std::vector<T> xv = x.vec();
      tp->record(y, {px}, [xv](const TensorT<T>& g) {
        TensorT<T> gx(g.shape());
        constexpr double is2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        for (index_t i = 0; i < g.numel(); ++i) {
          const double v = static_cast<double>(xv[static_cast<size_t>(i)]);
          const double cdf = 0.5 * (1.0 + std::erf(v * is2));
          const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
          gx[i] = g[i] * static_cast<T>(cdf + v * pdf);
        }
        return std::vector<TensorT<T>>{gx};
      });
    }
  }
  check_finite(y, "gelu");
  return y;
}

template <class T>
TensorT<T> abs_val(const TensorT<T>& x) {
  TensorT<T> y(x.shape());
  for (index_t i = 0; i < x.numel(); ++i) y[i] = std::abs(x[i]);
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      std::vector<T> xv = x.vec();
      tp->record(y, {px}, [xv](const TensorT<T>& g) {
        TensorT<T> gx(g.shape());
        for (index_t i = 0; i < g.numel(); ++i) {
          const T v = xv[static_cast<size_t>(i)];
          // subgradient at 0 is 0
          gx[i] = v > T(0) ? g[i] : (v < T(0) ? -g[i] : T(0));
        }
        return std::vector<TensorT<T>>{gx};
      });
    }
  }
  check_finite(y, "abs");
  return y;
}

template <class T>
TensorT<T> softmax(const TensorT<T>& x, int axis) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  LCE_CHECK(axis >= 0 && axis < r, "softmax axis out of range");
  const index_t C = x.dim(axis);
  index_t inner = 1, outer = 1;
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  TensorT<T> y(x.shape());
  const T* xp = x.data();
  T* yp = y.data();
  for (index_t o = 0; o < outer; ++o)
    for (index_t in = 0; in < inner; ++in) {
      const index_t base = o * C * inner + in;
      T m = xp[base];
      for (index_t c = 1; c < C; ++c) m = std::max(m, xp[base + c * inner]);
      T s = 0;
      for (index_t c = 0; c < C; ++c) {
        const T e = std::exp(xp[base + c * inner] - m);
        yp[base + c * inner] = e;
        s += e;
      }
      const T invs = T(1) / s;
      for (index_t c = 0; c < C; ++c) yp[base + c * inner] *= invs;
    }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      std::vector<T> yv = y.vec();
      tp->record(y, {px}, [yv, C, inner, outer](const TensorT<T>& g) {
        TensorT<T> gx(g.shape());
        const T* gp = g.data();
        T* o_gx = gx.data();
        for (index_t o = 0; o < outer; ++o)
          for (index_t in = 0; in < inner; ++in) {
            const index_t base = o * C * inner + in;
            T dot = 0;
            for (index_t c = 0; c < C; ++c)
              dot += gp[base + c * inner] * yv[static_cast<size_t>(base + c * inner)];
            for (index_t c = 0; c < C; ++c) {
              const T yi = yv[static_cast<size_t>(base + c * inner)];
              o_gx[base + c * inner] = yi * (gp[base + c * inner] - dot);
            }
          }
        return std::vector<TensorT<T>>{gx};
      });
    }
  }
  check_finite(y, "softmax");
  return y;
}

// ------------------------------------------------------------------
// reductions and losses
// ------------------------------------------------------------------

template <class T>
TensorT<T> sum(const TensorT<T>& x) {
  T acc = 0;
  for (index_t i = 0; i < x.numel(); ++i) acc += x[i];
  TensorT<T> y = TensorT<T>::scalar(acc);
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      Shape xs = x.shape();
      tp->record(y, {px}, [xs](const TensorT<T>& g) {
        return std::vector<TensorT<T>>{TensorT<T>::full(xs, g[0])};
      });
    }
  }
  check_finite(y, "sum");
  return y;
}

template <class T>
TensorT<T> mean(const TensorT<T>& x) {
  LCE_CHECK(x.numel() > 0, "mean of empty tensor");
  T acc = 0;
  for (index_t i = 0; i < x.numel(); ++i) acc += x[i];
  const T inv = T(1) / static_cast<T>(x.numel());
  TensorT<T> y = TensorT<T>::scalar(acc * inv);
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      Shape xs = x.shape();
      tp->record(y, {px}, [xs, inv](const TensorT<T>& g) {
        return std::vector<TensorT<T>>{TensorT<T>::full(xs, g[0] * inv)};
      });
    }
  }
  check_finite(y, "mean");
  return y;
}

// mean absolute error; subgradient 0 at exact ties
template <class T>
TensorT<T> l1_loss(const TensorT<T>& pred, const TensorT<T>& target) {
  LCE_CHECK(pred.same_shape(target), "l1_loss shape mismatch ",
            shape_str(pred.shape()), " vs ", shape_str(target.shape()));
  const index_t n = pred.numel();
  LCE_CHECK(n > 0, "l1_loss on empty tensors");
  double acc = 0;
  for (index_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(pred[i] - target[i]));
  TensorT<T> y = TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  if (auto* tp = TapeT<T>::current()) {
    int pa = tp->track(pred), pb = tp->track(target);
    if (tp->any_tracked({pa, pb})) {
      std::vector<T> pv = pred.vec(), tv = target.vec();
      Shape ps = pred.shape();
      tp->record(y, {pa, pb}, [pv, tv, ps](const TensorT<T>& g) {
        const index_t n2 = static_cast<index_t>(pv.size());
        const T w = g[0] / static_cast<T>(n2);
        TensorT<T> gp(ps), gt(ps);
        for (index_t i = 0; i < n2; ++i) {
          const T d = pv[static_cast<size_t>(i)] - tv[static_cast<size_t>(i)];
          const T s = d > T(0) ? w : (d < T(0) ? -w : T(0));
          gp[i] = s;
          gt[i] = -s;
        }
        return std::vector<TensorT<T>>{gp, gt};
      });
    }
  }
  check_finite(y, "l1_loss");
  return y;
}

// ------------------------------------------------------------------
// linear algebra
// ------------------------------------------------------------------

// affine map on the trailing axis: y[..., o] = sum_k x[..., k] w[o, k] + b[o]
template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b) {
  LCE_CHECK(w.rank() == 2, "linear weight must be [Out, In]");
  const index_t in = w.dim(1), out = w.dim(0);
  LCE_CHECK(x.rank() >= 1 && x.dim(x.rank() - 1) == in, "linear input trailing extent ",
            x.dim(x.rank() - 1), " != In ", in);
  if (b) LCE_CHECK(b->rank() == 1 && b->dim(0) == out, "linear bias must be [Out]");
  const index_t rows = x.numel() / in;
  Shape ys = x.shape();
  ys.back() = out;
  TensorT<T> y(ys);
  detail::gemm_nt(rows, out, in, x.data(), w.data(), y.data());
  if (b) {
    T* yp = y.data();
    const T* bp = b->data();
    for (index_t r = 0; r < rows; ++r)
      for (index_t o = 0; o < out; ++o) yp[r * out + o] += bp[o];
  }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x), pw = tp->track(w);
    int pb = b ? tp->track(*b) : -1;
    if (tp->any_tracked({px, pw, pb})) {
      std::vector<T> xv = x.vec(), wv = w.vec();
      Shape xs = x.shape(), ws = w.shape();
      bool has_bias = b != nullptr;
      tp->record(y, {px, pw, pb},
                 [xv, wv, xs, ws, rows, in, out, has_bias](const TensorT<T>& g) {
                   TensorT<T> gx(xs), gw(ws);
                   detail::gemm_nn(rows, in, out, g.data(), wv.data(), gx.data());
                   detail::gemm_tn(out, in, rows, g.data(), xv.data(), gw.data());
                   TensorT<T> gb;
                   if (has_bias) {
                     gb = TensorT<T>(Shape{out});
                     const T* gp = g.data();
                     for (index_t r = 0; r < rows; ++r)
                       for (index_t o = 0; o < out; ++o) gb[o] += gp[r * out + o];
                   }
                   return std::vector<TensorT<T>>{gx, gw, gb};
                 });
    }
  }
  check_finite(y, "linear");
  return y;
}

template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w) {
  return linear(x, w, static_cast<const TensorT<T>*>(nullptr));
}

// batched matmul on the two trailing axes; leading extents must match
template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  LCE_CHECK(a.rank() >= 2 && b.rank() == a.rank(), "matmul rank mismatch");
  const int r = a.rank();
  for (int i = 0; i < r - 2; ++i)
    LCE_CHECK(a.dim(i) == b.dim(i), "matmul leading extent mismatch at axis ", i);
  const index_t M = a.dim(r - 2), K = a.dim(r - 1), N = b.dim(r - 1);
  LCE_CHECK(b.dim(r - 2) == K, "matmul inner extent mismatch: ", K, " vs ", b.dim(r - 2));
  index_t batch = 1;
  for (int i = 0; i < r - 2; ++i) batch *= a.dim(i);
  Shape ys = a.shape();
  ys[static_cast<size_t>(r - 1)] = N;
  TensorT<T> y(ys);
  for (index_t g = 0; g < batch; ++g)
    detail::gemm_nn(M, N, K, a.data() + g * M * K, b.data() + g * K * N,
                    y.data() + g * M * N);
  if (auto* tp = TapeT<T>::current()) {
    int pa = tp->track(a), pb = tp->track(b);
    if (tp->any_tracked({pa, pb})) {
      std::vector<T> av = a.vec(), bv = b.vec();
      Shape as = a.shape(), bs = b.shape();
      tp->record(y, {pa, pb}, [av, bv, as, bs, M, N, K, batch](const TensorT<T>& g) {
        TensorT<T> ga(as), gb(bs);
        for (index_t i = 0; i < batch; ++i) {
          // dA = dY B^T ; dB = A^T dY
          detail::gemm_nt(M, K, N, g.data() + i * M * N, bv.data() + i * K * N,
                          ga.data() + i * M * K);
          detail::gemm_tn(K, N, M, av.data() + i * M * K, g.data() + i * M * N,
                          gb.data() + i * K * N);
        }
        return std::vector<TensorT<T>>{ga, gb};
      });
    }
  }
  check_finite(y, "matmul");
  return y;
}

// batched a @ b^T on trailing axes: a [..., M, K], b [..., N, K] -> [..., M, N]
template <class T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
  LCE_CHECK(a.rank() >= 2 && b.rank() == a.rank(), "matmul_nt rank mismatch");
  const int r = a.rank();
  for (int i = 0; i < r - 2; ++i)
    LCE_CHECK(a.dim(i) == b.dim(i), "matmul_nt leading extent mismatch at axis ", i);
  const index_t M = a.dim(r - 2), K = a.dim(r - 1), N = b.dim(r - 2);
  LCE_CHECK(b.dim(r - 1) == K, "matmul_nt inner extent mismatch");
  index_t batch = 1;
  for (int i = 0; i < r - 2; ++i) batch *= a.dim(i);
  Shape ys = a.shape();
  ys[static_cast<size_t>(r - 2)] = M;
  ys[static_cast<size_t>(r - 1)] = N;
  TensorT<T> y(ys);
  for (index_t g = 0; g < batch; ++g)
    detail::gemm_nt(M, N, K, a.data() + g * M * K, b.data() + g * N * K,
                    y.data() + g * M * N);
  if (auto* tp = TapeT<T>::current()) {
    int pa = tp->track(a), pb = tp->track(b);
    if (tp->any_tracked({pa, pb})) {
      std::vector<T> av = a.vec(), bv = b.vec();
      Shape as = a.shape(), bs = b.shape();
      tp->record(y, {pa, pb}, [av, bv, as, bs, M, N, K, batch](const TensorT<T>& g) {
        TensorT<T> ga(as), gb(bs);
        for (index_t i = 0; i < batch; ++i) {
          // y = a b^T : dA = dY B ; dB = dY^T A
          detail::gemm_nn(M, K, N, g.data() + i * M * N, bv.data() + i * N * K,
                          ga.data() + i * M * K);
          detail::gemm_tn(N, K, M, g.data() + i * M * N, av.data() + i * M * K,
                          gb.data() + i * N * K);
        }
        return std::vector<TensorT<T>>{ga, gb};
      });
    }
  }
  check_finite(y, "matmul_nt");
  return y;
}

// per-position normalization across one axis to zero mean / unit variance,
// then the gamma/beta affine
template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      int axis, T eps = T(1e-5)) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  LCE_CHECK(axis >= 0 && axis < r, "layer_norm axis out of range");
  const index_t C = x.dim(axis);
  LCE_CHECK(gamma.numel() == C && beta.numel() == C, "layer_norm gamma/beta must have ", C,
            " elements");
  index_t inner = 1, outer = 1;
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  TensorT<T> y(x.shape());
  std::vector<T> mu(static_cast<size_t>(outer * inner)), rstd(static_cast<size_t>(outer * inner));
  const T* xp = x.data();
  const T* gm = gamma.data();
  const T* bt = beta.data();
  T* yp = y.data();
  for (index_t o = 0; o < outer; ++o)
    for (index_t in = 0; in < inner; ++in) {
      const index_t base = o * C * inner + in;
      T m = 0;
      for (index_t c = 0; c < C; ++c) m += xp[base + c * inner];
      m /= static_cast<T>(C);
      T v = 0;
      for (index_t c = 0; c < C; ++c) {
        const T d = xp[base + c * inner] - m;
        v += d * d;
      }
      v /= static_cast<T>(C);
      const T rs = T(1) / std::sqrt(v + eps);
      mu[static_cast<size_t>(o * inner + in)] = m;
      rstd[static_cast<size_t>(o * inner + in)] = rs;
      for (index_t c = 0; c < C; ++c)
        yp[base + c * inner] = (xp[base + c * inner] - m) * rs * gm[c] + bt[c];
    }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x), pg = tp->track(gamma), pb = tp->track(beta);
    if (tp->any_tracked({px, pg, pb})) {
      std::vector<T> xv = x.vec(), gv = gamma.vec();
      Shape xs = x.shape();
      tp->record(y, {px, pg, pb},
                 [xv, gv, mu, rstd, xs, C, inner, outer](const TensorT<T>& g) {
                   TensorT<T> gx(xs);
                   TensorT<T> ggamma(Shape{C}), gbeta(Shape{C});
                   const T* gp = g.data();
                   for (index_t o = 0; o < outer; ++o)
                     for (index_t in = 0; in < inner; ++in) {
                       const index_t base = o * C * inner + in;
                       const T m = mu[static_cast<size_t>(o * inner + in)];
                       const T rs = rstd[static_cast<size_t>(o * inner + in)];
                       T sum_dxhat = 0, sum_dxhat_xhat = 0;
                       for (index_t c = 0; c < C; ++c) {
                         const T xhat = (xv[static_cast<size_t>(base + c * inner)] - m) * rs;
                         const T dxhat = gp[base + c * inner] * gv[static_cast<size_t>(c)];
                         sum_dxhat += dxhat;
                         sum_dxhat_xhat += dxhat * xhat;
                         ggamma[c] += gp[base + c * inner] * xhat;
                         gbeta[c] += gp[base + c * inner];
                       }
                       const T invC = T(1) / static_cast<T>(C);
                       for (index_t c = 0; c < C; ++c) {
                         const T xhat = (xv[static_cast<size_t>(base + c * inner)] - m) * rs;
                         const T dxhat = gp[base + c * inner] * gv[static_cast<size_t>(c)];
                         gx.data()[base + c * inner] =
                             rs * (dxhat - invC * sum_dxhat - xhat * invC * sum_dxhat_xhat);
                       }
                     }
                   return std::vector<TensorT<T>>{gx, ggamma, gbeta};
                 });
    }
  }
  check_finite(y, "layer_norm");
  return y;
}

// ------------------------------------------------------------------
// spatial padding / cropping / rolling (BCHW)
// ------------------------------------------------------------------

template <class T>
TensorT<T> pad2d(const TensorT<T>& x, index_t top, index_t bottom, index_t left,
                 index_t right, PadKind kind) {
  LCE_CHECK(x.rank() == 4, "pad2d expects BCHW, got ", shape_str(x.shape()));
  LCE_CHECK(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, "negative padding");
  const index_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const index_t OH = H + top + bottom, OW = W + left + right;
  if (kind == PadKind::kReflect) {
    LCE_CHECK(top <= H && bottom <= H && left <= W && right <= W,
              "reflect pad wider than the image");
  }
  TensorT<T> y(Shape{B, C, OH, OW});
  const T* xp = x.data();
  T* yp = y.data();
  for (index_t bc = 0; bc < B * C; ++bc) {
    const T* src = xp + bc * H * W;
    T* dst = yp + bc * OH * OW;
    for (index_t oy = 0; oy < OH; ++oy) {
      const index_t sy = oy - top;
      for (index_t ox = 0; ox < OW; ++ox) {
        const index_t sx = ox - left;
        if (kind == PadKind::kZero) {
          dst[oy * OW + ox] = (sy >= 0 && sy < H && sx >= 0 && sx < W)
                                  ? src[sy * W + sx]
                                  : T(0);
        } else {
          dst[oy * OW + ox] =
              src[detail::reflect_index(sy, H) * W + detail::reflect_index(sx, W)];
        }
      }
    }
  }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      Shape xs = x.shape();
      tp->record(y, {px}, [xs, top, left, OH, OW, kind](const TensorT<T>& g) {
        const index_t B2 = xs[0], C2 = xs[1], H2 = xs[2], W2 = xs[3];
        TensorT<T> gx(xs);
        const T* gp = g.data();
        T* dst = gx.data();
        for (index_t bc = 0; bc < B2 * C2; ++bc) {
          const T* gsl = gp + bc * OH * OW;
          T* d = dst + bc * H2 * W2;
          for (index_t oy = 0; oy < OH; ++oy) {
            const index_t sy = oy - top;
            for (index_t ox = 0; ox < OW; ++ox) {
              const index_t sx = ox - left;
              if (kind == PadKind::kZero) {
                if (sy >= 0 && sy < H2 && sx >= 0 && sx < W2)
                  d[sy * W2 + sx] += gsl[oy * OW + ox];
              } else {
                d[detail::reflect_index(sy, H2) * W2 + detail::reflect_index(sx, W2)] +=
                    gsl[oy * OW + ox];
              }
            }
          }
        }
        return std::vector<TensorT<T>>{gx};
      });
    }
  }
  check_finite(y, "pad2d");
  return y;
}

template <class T>
TensorT<T> crop2d(const TensorT<T>& x, index_t top, index_t left, index_t out_h,
                  index_t out_w) {
  LCE_CHECK(x.rank() == 4, "crop2d expects BCHW");
  const index_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  LCE_CHECK(top >= 0 && left >= 0 && top + out_h <= H && left + out_w <= W,
            "crop window out of bounds");
  TensorT<T> y(Shape{B, C, out_h, out_w});
  const T* xp = x.data();
  T* yp = y.data();
  for (index_t bc = 0; bc < B * C; ++bc)
    for (index_t oy = 0; oy < out_h; ++oy)
      std::memcpy(yp + (bc * out_h + oy) * out_w,
                  xp + (bc * H + top + oy) * W + left,
                  sizeof(T) * static_cast<size_t>(out_w));
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      Shape xs = x.shape();
      tp->record(y, {px}, [xs, top, left, out_h, out_w](const TensorT<T>& g) {
        TensorT<T> gx(xs);
        const index_t B2 = xs[0], C2 = xs[1], H2 = xs[2], W2 = xs[3];
        for (index_t bc = 0; bc < B2 * C2; ++bc)
          for (index_t oy = 0; oy < out_h; ++oy)
            std::memcpy(gx.data() + (bc * H2 + top + oy) * W2 + left,
                        g.data() + (bc * out_h + oy) * out_w,
                        sizeof(T) * static_cast<size_t>(out_w));
        return std::vector<TensorT<T>>{gx};
      });
    }
  }
  check_finite(y, "crop2d");
  return y;
}

// cyclic shift: y[..., h, w] = x[..., (h - dy) mod H, (w - dx) mod W]
template <class T>
TensorT<T> roll2d(const TensorT<T>& x, index_t dy, index_t dx) {
  LCE_CHECK(x.rank() == 4, "roll2d expects BCHW");
  const index_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const index_t sy = ((dy % H) + H) % H, sx = ((dx % W) + W) % W;
  TensorT<T> y(x.shape());
  const T* xp = x.data();
  T* yp = y.data();
  for (index_t bc = 0; bc < B * C; ++bc)
    for (index_t h = 0; h < H; ++h) {
      const index_t srch = (h - sy + H) % H;
      const T* src = xp + (bc * H + srch) * W;
      T* dst = yp + (bc * H + h) * W;
      for (index_t w = 0; w < W; ++w) dst[w] = src[(w - sx + W) % W];
    }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      tp->record(y, {px}, [dy, dx](const TensorT<T>& g) {
        return std::vector<TensorT<T>>{roll2d_raw(g, -dy, -dx)};
      });
    }
  }
  check_finite(y, "roll2d");
  return y;
}

// untaped helper used by the adjoint above
template <class T>
TensorT<T> roll2d_raw(const TensorT<T>& x, index_t dy, index_t dx) {
  const index_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const index_t sy = ((dy % H) + H) % H, sx = ((dx % W) + W) % W;
  TensorT<T> y(x.shape());
  const T* xp = x.data();
  T* yp = y.data();
  for (index_t bc = 0; bc < B * C; ++bc)
    for (index_t h = 0; h < H; ++h) {
      const index_t srch = (h - sy + H) % H;
      const T* src = xp + (bc * H + srch) * W;
      T* dst = yp + (bc * H + h) * W;
      for (index_t w = 0; w < W; ++w) dst[w] = src[(w - sx + W) % W];
    }
  return y;
}

// ------------------------------------------------------------------
// shape ops
// ------------------------------------------------------------------

template <class T>
TensorT<T> reshape(const TensorT<T>& x, Shape s) {
  TensorT<T> y = x.reshaped(std::move(s));
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      Shape xs = x.shape();
      tp->record(y, {px}, [xs](const TensorT<T>& g) {
        return std::vector<TensorT<T>>{g.reshaped(xs)};
      });
    }
  }
  return y;
}

template <class T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& axes) {
  const int r = x.rank();
  LCE_CHECK(static_cast<int>(axes.size()) == r, "permute axes rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(r), false);
  Shape ys(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    LCE_CHECK(axes[static_cast<size_t>(i)] >= 0 && axes[static_cast<size_t>(i)] < r &&
                  !seen[static_cast<size_t>(axes[static_cast<size_t>(i)])],
              "invalid permutation");
    seen[static_cast<size_t>(axes[static_cast<size_t>(i)])] = true;
    ys[static_cast<size_t>(i)] = x.dim(axes[static_cast<size_t>(i)]);
  }
  TensorT<T> y(ys);
  const auto in_st = detail::strides_of(x.shape());
  std::vector<index_t> step(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i)
    step[static_cast<size_t>(i)] = in_st[static_cast<size_t>(axes[static_cast<size_t>(i)])];
  const T* xp = x.data();
  T* yp = y.data();
  std::vector<index_t> idx(static_cast<size_t>(r), 0);
  index_t src = 0;
  const index_t n = y.numel();
  for (index_t lin = 0; lin < n; ++lin) {
    yp[lin] = xp[src];
    for (int d = r - 1; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      src += step[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < ys[static_cast<size_t>(d)]) break;
      src -= step[static_cast<size_t>(d)] * ys[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      std::vector<int> inv(static_cast<size_t>(r));
      for (int i = 0; i < r; ++i) inv[static_cast<size_t>(axes[static_cast<size_t>(i)])] = i;
      tp->record(y, {px}, [inv](const TensorT<T>& g) {
        return std::vector<TensorT<T>>{permute_raw(g, inv)};
      });
    }
  }
  return y;
}

template <class T>
TensorT<T> permute_raw(const TensorT<T>& x, const std::vector<int>& axes) {
  const int r = x.rank();
  Shape ys(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) ys[static_cast<size_t>(i)] = x.dim(axes[static_cast<size_t>(i)]);
  TensorT<T> y(ys);
  const auto in_st = detail::strides_of(x.shape());
  std::vector<index_t> step(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i)
    step[static_cast<size_t>(i)] = in_st[static_cast<size_t>(axes[static_cast<size_t>(i)])];
  const T* xp = x.data();
  T* yp = y.data();
  std::vector<index_t> idx(static_cast<size_t>(r), 0);
  index_t src = 0;
  const index_t n = y.numel();
  for (index_t lin = 0; lin < n; ++lin) {
    yp[lin] = xp[src];
    for (int d = r - 1; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      src += step[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < ys[static_cast<size_t>(d)]) break;
      src -= step[static_cast<size_t>(d)] * ys[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
  return y;
}

template <class T>
TensorT<T> slice_axis(const TensorT<T>& x, int axis, index_t start, index_t len) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  LCE_CHECK(axis >= 0 && axis < r, "slice axis out of range");
  LCE_CHECK(start >= 0 && len >= 0 && start + len <= x.dim(axis), "slice window invalid");
  index_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  const index_t C = x.dim(axis);
  Shape ys = x.shape();
  ys[static_cast<size_t>(axis)] = len;
  TensorT<T> y(ys);
  const T* xp = x.data();
  T* yp = y.data();
  for (index_t o = 0; o < outer; ++o)
    std::memcpy(yp + o * len * inner, xp + (o * C + start) * inner,
                sizeof(T) * static_cast<size_t>(len * inner));
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      Shape xs = x.shape();
      tp->record(y, {px}, [xs, axis, start, len, outer, inner, C](const TensorT<T>& g) {
        TensorT<T> gx(xs);
        for (index_t o = 0; o < outer; ++o)
          std::memcpy(gx.data() + (o * C + start) * inner, g.data() + o * len * inner,
                      sizeof(T) * static_cast<size_t>(len * inner));
        return std::vector<TensorT<T>>{gx};
      });
    }
  }
  return y;
}

template <class T>
TensorT<T> concat_axis(const TensorT<T>& a, const TensorT<T>& b, int axis) {
  const int r = a.rank();
  LCE_CHECK(b.rank() == r, "concat rank mismatch");
  if (axis < 0) axis += r;
  LCE_CHECK(axis >= 0 && axis < r, "concat axis out of range");
  for (int i = 0; i < r; ++i)
    if (i != axis)
      LCE_CHECK(a.dim(i) == b.dim(i), "concat extent mismatch at axis ", i);
  index_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= a.dim(i);
  const index_t ca = a.dim(axis), cb = b.dim(axis);
  Shape ys = a.shape();
  ys[static_cast<size_t>(axis)] = ca + cb;
  TensorT<T> y(ys);
  T* yp = y.data();
  for (index_t o = 0; o < outer; ++o) {
    std::memcpy(yp + o * (ca + cb) * inner, a.data() + o * ca * inner,
                sizeof(T) * static_cast<size_t>(ca * inner));
    std::memcpy(yp + (o * (ca + cb) + ca) * inner, b.data() + o * cb * inner,
                sizeof(T) * static_cast<size_t>(cb * inner));
  }
  if (auto* tp = TapeT<T>::current()) {
    int pa = tp->track(a), pb = tp->track(b);
    if (tp->any_tracked({pa, pb})) {
      Shape as = a.shape(), bs = b.shape();
      tp->record(y, {pa, pb}, [as, bs, outer, inner, ca, cb](const TensorT<T>& g) {
        TensorT<T> ga(as), gb(bs);
        for (index_t o = 0; o < outer; ++o) {
          std::memcpy(ga.data() + o * ca * inner, g.data() + o * (ca + cb) * inner,
                      sizeof(T) * static_cast<size_t>(ca * inner));
          std::memcpy(gb.data() + o * cb * inner,
                      g.data() + (o * (ca + cb) + ca) * inner,
                      sizeof(T) * static_cast<size_t>(cb * inner));
        }
        return std::vector<TensorT<T>>{ga, gb};
      });
    }
  }
  check_finite(y, "concat");
  return y;
}

// ------------------------------------------------------------------
// convolution
// ------------------------------------------------------------------

// valid cross-correlation (no padding); the public conv2d composes pad2d + this
template <class T>
TensorT<T> conv2d_valid(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b,
                        index_t stride) {
  LCE_CHECK(x.rank() == 4, "conv2d input must be BCHW, got ", shape_str(x.shape()));
  LCE_CHECK(w.rank() == 4, "conv2d weight must be [Out, In, kh, kw]");
  LCE_CHECK(stride >= 1, "stride must be positive, got ", stride);
  const index_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const index_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  LCE_CHECK(w.dim(1) == C, "conv2d channel mismatch: input ", C, " vs weight ", w.dim(1));
  LCE_CHECK(kh <= H && kw <= W, "kernel ", kh, "x", kw, " larger than (padded) input ", H,
            "x", W);
  if (b) LCE_CHECK(b->rank() == 1 && b->dim(0) == O, "conv2d bias must be [Out]");
  const index_t OH = (H - kh) / stride + 1, OW = (W - kw) / stride + 1;
  const index_t K = C * kh * kw, P = OH * OW;
  TensorT<T> y(Shape{B, O, OH, OW});
  std::vector<T> col(static_cast<size_t>(K * P));
  for (index_t bi = 0; bi < B; ++bi) {
    detail::im2col(x.data() + bi * C * H * W, C, H, W, kh, kw, stride, col.data());
    detail::gemm_nn(O, P, K, w.data(), col.data(), y.data() + bi * O * P);
  }
  if (b) {
    T* yp = y.data();
    const T* bp = b->data();
    for (index_t bi = 0; bi < B; ++bi)
      for (index_t o = 0; o < O; ++o) {
        T* row = yp + (bi * O + o) * P;
        const T bv = bp[o];
        for (index_t p = 0; p < P; ++p) row[p] += bv;
      }
  }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x), pw = tp->track(w);
    int pb = b ? tp->track(*b) : -1;
    if (tp->any_tracked({px, pw, pb})) {
      std::vector<T> xv = x.vec(), wv = w.vec();
      Shape xs = x.shape(), ws = w.shape();
      bool has_bias = b != nullptr;
      tp->record(
          y, {px, pw, pb},
          [xv, wv, xs, ws, stride, has_bias](const TensorT<T>& g) {
            const index_t B2 = xs[0], C2 = xs[1], H2 = xs[2], W2 = xs[3];
            const index_t O2 = ws[0], kh2 = ws[2], kw2 = ws[3];
            const index_t OH2 = (H2 - kh2) / stride + 1, OW2 = (W2 - kw2) / stride + 1;
            const index_t K2 = C2 * kh2 * kw2, P2 = OH2 * OW2;
            TensorT<T> gx(xs), gw(ws), gb;
            if (has_bias) gb = TensorT<T>(Shape{O2});
            std::vector<T> col(static_cast<size_t>(K2 * P2));
            std::vector<T> gcol(static_cast<size_t>(K2 * P2));
            for (index_t bi = 0; bi < B2; ++bi) {
              const T* gslice = g.data() + bi * O2 * P2;
              // dW += dY col^T
              detail::im2col(xv.data() + bi * C2 * H2 * W2, C2, H2, W2, kh2, kw2, stride,
                             col.data());
              detail::gemm_nt(O2, K2, P2, gslice, col.data(), gw.data());
              // dX = col2im(W^T dY)
              std::fill(gcol.begin(), gcol.end(), T(0));
              detail::gemm_tn(K2, P2, O2, wv.data(), gslice, gcol.data());
              detail::col2im(gcol.data(), C2, H2, W2, kh2, kw2, stride,
                             gx.data() + bi * C2 * H2 * W2);
              if (has_bias)
                for (index_t o = 0; o < O2; ++o) {
                  T acc = 0;
                  const T* row = gslice + o * P2;
                  for (index_t p = 0; p < P2; ++p) acc += row[p];
                  gb[o] += acc;
                }
            }
            return std::vector<TensorT<T>>{gx, gw, gb};
          });
    }
  }
  check_finite(y, "conv2d");
  return y;
}

enum class ConvPad { kValid, kZero, kReflect };

// standard cross-correlation; "same" spatial size when stride=1 and a
// symmetric pad mode is chosen (odd kernels)
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* b,
                  index_t stride = 1, ConvPad pad = ConvPad::kZero) {
  if (pad == ConvPad::kValid) return conv2d_valid(x, w, b, stride);
  const index_t kh = w.dim(2), kw = w.dim(3);
  LCE_CHECK(kh % 2 == 1 && kw % 2 == 1, "same-padding needs odd kernels, got ", kh, "x", kw);
  TensorT<T> xp = pad2d(x, (kh - 1) / 2, (kh - 1) / 2, (kw - 1) / 2, (kw - 1) / 2,
                        pad == ConvPad::kZero ? PadKind::kZero : PadKind::kReflect);
  return conv2d_valid(xp, w, b, stride);
}

template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, index_t stride = 1,
                  ConvPad pad = ConvPad::kZero) {
  return conv2d(x, w, static_cast<const TensorT<T>*>(nullptr), stride, pad);
}

// ------------------------------------------------------------------
// pooling
// ------------------------------------------------------------------

enum class PoolMode { kMax, kAvg };

// per-pixel reduction across channels: BCHW -> B,1,H,W
template <class T>
TensorT<T> pool_channel(const TensorT<T>& x, PoolMode mode) {
  LCE_CHECK(x.rank() == 4, "pool_channel expects BCHW");
  const index_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  LCE_CHECK(C >= 1, "pool_channel on empty channel axis");
  TensorT<T> y(Shape{B, 1, H, W});
  std::vector<std::int32_t> argmax;
  if (mode == PoolMode::kMax) argmax.assign(static_cast<size_t>(B * H * W), 0);
  const T* xp = x.data();
  T* yp = y.data();
  const index_t HW = H * W;
  for (index_t bi = 0; bi < B; ++bi)
    for (index_t p = 0; p < HW; ++p) {
      const T* base = xp + bi * C * HW + p;
      if (mode == PoolMode::kMax) {
        T best = base[0];
        std::int32_t arg = 0;
        for (index_t c = 1; c < C; ++c) {
          const T v = base[c * HW];
          if (v > best) {  // ties keep the lowest channel index
            best = v;
            arg = static_cast<std::int32_t>(c);
          }
        }
        yp[bi * HW + p] = best;
        argmax[static_cast<size_t>(bi * HW + p)] = arg;
      } else {
        T acc = 0;
        for (index_t c = 0; c < C; ++c) acc += base[c * HW];
        yp[bi * HW + p] = acc / static_cast<T>(C);
      }
    }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      Shape xs = x.shape();
      tp->record(y, {px}, [xs, mode, argmax, B, C, HW](const TensorT<T>& g) {
        TensorT<T> gx(xs);
        const T* gp = g.data();
        for (index_t bi = 0; bi < B; ++bi)
          for (index_t p = 0; p < HW; ++p) {
            const T gv = gp[bi * HW + p];
            if (mode == PoolMode::kMax) {
              const index_t c = argmax[static_cast<size_t>(bi * HW + p)];
              gx.data()[(bi * C + c) * HW + p] = gv;
            } else {
              const T spread = gv / static_cast<T>(C);
              for (index_t c = 0; c < C; ++c) gx.data()[(bi * C + c) * HW + p] = spread;
            }
          }
        return std::vector<TensorT<T>>{gx};
      });
    }
  }
  check_finite(y, "pool_channel");
  return y;
}

// BCHW -> B,C,1,1 spatial mean (channel-attention squeeze)
template <class T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
  LCE_CHECK(x.rank() == 4, "global_avg_pool expects BCHW");
  const index_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  LCE_CHECK(HW >= 1, "empty spatial extent");
  TensorT<T> y(Shape{B, C, 1, 1});
  const T* xp = x.data();
  for (index_t bc = 0; bc < B * C; ++bc) {
    T acc = 0;
    const T* base = xp + bc * HW;
    for (index_t p = 0; p < HW; ++p) acc += base[p];
    y[bc] = acc / static_cast<T>(HW);
  }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      Shape xs = x.shape();
      tp->record(y, {px}, [xs, B, C, HW](const TensorT<T>& g) {
        TensorT<T> gx(xs);
        for (index_t bc = 0; bc < B * C; ++bc) {
          const T spread = g[bc] / static_cast<T>(HW);
          T* base = gx.data() + bc * HW;
          for (index_t p = 0; p < HW; ++p) base[p] = spread;
        }
        return std::vector<TensorT<T>>{gx};
      });
    }
  }
  check_finite(y, "global_avg_pool");
  return y;
}

// ------------------------------------------------------------------
// broadcast helpers (the only broadcast patterns the nets use)
// ------------------------------------------------------------------

// x:[B,C,H,W] * m:[B,1,H,W]
template <class T>
TensorT<T> mul_bcast_channel(const TensorT<T>& x, const TensorT<T>& m) {
  LCE_CHECK(x.rank() == 4 && m.rank() == 4 && m.dim(1) == 1 && x.dim(0) == m.dim(0) &&
                x.dim(2) == m.dim(2) && x.dim(3) == m.dim(3),
            "mul_bcast_channel wants x BCHW and m B1HW");
  const index_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  TensorT<T> y(x.shape());
  for (index_t b = 0; b < B; ++b)
    for (index_t c = 0; c < C; ++c) {
      const T* xs = x.data() + (b * C + c) * HW;
      const T* ms = m.data() + b * HW;
      T* ys = y.data() + (b * C + c) * HW;
      for (index_t p = 0; p < HW; ++p) ys[p] = xs[p] * ms[p];
    }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x), pm = tp->track(m);
    if (tp->any_tracked({px, pm})) {
      std::vector<T> xv = x.vec(), mv = m.vec();
      Shape xs2 = x.shape(), ms2 = m.shape();
      tp->record(y, {px, pm}, [xv, mv, xs2, ms2, B, C, HW](const TensorT<T>& g) {
        TensorT<T> gx(xs2), gm(ms2);
        for (index_t b = 0; b < B; ++b)
          for (index_t c = 0; c < C; ++c) {
            const T* gs = g.data() + (b * C + c) * HW;
            const T* xp = xv.data() + (b * C + c) * HW;
            const T* mp = mv.data() + b * HW;
            T* gxs = gx.data() + (b * C + c) * HW;
            T* gms = gm.data() + b * HW;
            for (index_t p = 0; p < HW; ++p) {
              gxs[p] = gs[p] * mp[p];
              gms[p] += gs[p] * xp[p];
            }
          }
        return std::vector<TensorT<T>>{gx, gm};
      });
    }
  }
  check_finite(y, "mul_bcast_channel");
  return y;
}

// x:[B,C,H,W] * s:[B,C,1,1]
template <class T>
TensorT<T> mul_bcast_spatial(const TensorT<T>& x, const TensorT<T>& s) {
  LCE_CHECK(x.rank() == 4 && s.rank() == 4 && s.dim(2) == 1 && s.dim(3) == 1 &&
                x.dim(0) == s.dim(0) && x.dim(1) == s.dim(1),
            "mul_bcast_spatial wants x BCHW and s BC11");
  const index_t BC = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
  TensorT<T> y(x.shape());
  for (index_t bc = 0; bc < BC; ++bc) {
    const T sv = s[bc];
    const T* xs = x.data() + bc * HW;
    T* ys = y.data() + bc * HW;
    for (index_t p = 0; p < HW; ++p) ys[p] = xs[p] * sv;
  }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x), ps = tp->track(s);
    if (tp->any_tracked({px, ps})) {
      std::vector<T> xv = x.vec(), sv = s.vec();
      Shape xs2 = x.shape(), ss2 = s.shape();
      tp->record(y, {px, ps}, [xv, sv, xs2, ss2, BC, HW](const TensorT<T>& g) {
        TensorT<T> gx(xs2), gs(ss2);
        for (index_t bc = 0; bc < BC; ++bc) {
          const T scale = sv[static_cast<size_t>(bc)];
          const T* gp = g.data() + bc * HW;
          const T* xp = xv.data() + bc * HW;
          T* gxs = gx.data() + bc * HW;
          T acc = 0;
          for (index_t p = 0; p < HW; ++p) {
            gxs[p] = gp[p] * scale;
            acc += gp[p] * xp[p];
          }
          gs[bc] = acc;
        }
        return std::vector<TensorT<T>>{gx, gs};
      });
    }
  }
  check_finite(y, "mul_bcast_spatial");
  return y;
}

// x:[leading..., trailing...] + b:[trailing...]; gradient of b sums over the
// leading axes
template <class T>
TensorT<T> add_bcast_leading(const TensorT<T>& x, const TensorT<T>& b) {
  const index_t nb = b.numel();
  LCE_CHECK(nb > 0 && x.numel() % nb == 0, "add_bcast_leading extent mismatch");
  const int rx = x.rank(), rb = b.rank();
  LCE_CHECK(rb <= rx, "bias rank exceeds input rank");
  for (int i = 0; i < rb; ++i)
    LCE_CHECK(b.dim(rb - 1 - i) == x.dim(rx - 1 - i),
              "add_bcast_leading trailing extent mismatch");
  const index_t rows = x.numel() / nb;
  TensorT<T> y(x.shape());
  for (index_t r = 0; r < rows; ++r) {
    const T* xs = x.data() + r * nb;
    T* ys = y.data() + r * nb;
    for (index_t i = 0; i < nb; ++i) ys[i] = xs[i] + b[i];
  }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x), pb = tp->track(b);
    if (tp->any_tracked({px, pb})) {
      Shape bs = b.shape();
      tp->record(y, {px, pb}, [bs, rows, nb](const TensorT<T>& g) {
        TensorT<T> gb(bs);
        for (index_t r = 0; r < rows; ++r) {
          const T* gs = g.data() + r * nb;
          for (index_t i = 0; i < nb; ++i) gb[i] += gs[i];
        }
        return std::vector<TensorT<T>>{g.clone(), gb};
      });
    }
  }
  check_finite(y, "add_bcast_leading");
  return y;
}

// scores:[B*nW, heads, N, N] + mask:[nW, N, N] (constant; window index cycles)
template <class T>
TensorT<T> add_window_mask(const TensorT<T>& scores, const TensorT<T>& mask) {
  LCE_CHECK(scores.rank() == 4 && mask.rank() == 3, "add_window_mask shape contract");
  const index_t G = scores.dim(0), Hh = scores.dim(1), N = scores.dim(2);
  const index_t nW = mask.dim(0);
  LCE_CHECK(scores.dim(3) == N && mask.dim(1) == N && mask.dim(2) == N && G % nW == 0,
            "add_window_mask extent mismatch");
  TensorT<T> y(scores.shape());
  const index_t NN = N * N;
  for (index_t g = 0; g < G; ++g) {
    const T* ms = mask.data() + (g % nW) * NN;
    for (index_t h = 0; h < Hh; ++h) {
      const T* xs = scores.data() + (g * Hh + h) * NN;
      T* ys = y.data() + (g * Hh + h) * NN;
      for (index_t i = 0; i < NN; ++i) ys[i] = xs[i] + ms[i];
    }
  }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(scores);
    if (px >= 0)
      tp->record(y, {px},
                 [](const TensorT<T>& g) { return std::vector<TensorT<T>>{g.clone()}; });
  }
  check_finite(y, "add_window_mask");
  return y;
}

// scores:[G, heads, N, N] + table[idx[i*N+j], h]; the learnable relative
// position bias shared by all windows of a block
template <class T>
TensorT<T> add_rel_pos_bias(const TensorT<T>& scores, const TensorT<T>& table,
                            const std::vector<std::int32_t>& idx) {
  LCE_CHECK(scores.rank() == 4 && table.rank() == 2, "add_rel_pos_bias shape contract");
  const index_t G = scores.dim(0), Hh = scores.dim(1), N = scores.dim(2);
  LCE_CHECK(scores.dim(3) == N, "scores must be square in tokens");
  LCE_CHECK(static_cast<index_t>(idx.size()) == N * N, "index table must be N*N");
  LCE_CHECK(table.dim(1) == Hh, "table heads mismatch");
  TensorT<T> y(scores.shape());
  const index_t NN = N * N;
  for (index_t g = 0; g < G; ++g)
    for (index_t h = 0; h < Hh; ++h) {
      const T* xs = scores.data() + (g * Hh + h) * NN;
      T* ys = y.data() + (g * Hh + h) * NN;
      for (index_t i = 0; i < NN; ++i)
        ys[i] = xs[i] + table[idx[static_cast<size_t>(i)] * Hh + h];
    }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(scores), pt = tp->track(table);
    if (tp->any_tracked({px, pt})) {
      Shape ts = table.shape();
      tp->record(y, {px, pt}, [ts, idx, G, Hh, NN](const TensorT<T>& g) {
        TensorT<T> gt(ts);
        for (index_t gi = 0; gi < G; ++gi)
          for (index_t h = 0; h < Hh; ++h) {
            const T* gs = g.data() + (gi * Hh + h) * NN;
            for (index_t i = 0; i < NN; ++i)
              gt[idx[static_cast<size_t>(i)] * Hh + h] += gs[i];
          }
        return std::vector<TensorT<T>>{g.clone(), gt};
      });
    }
  }
  check_finite(y, "add_rel_pos_bias");
  return y;
}

// ------------------------------------------------------------------
// pixel shuffle and window partitioning
// ------------------------------------------------------------------

namespace detail {

template <class T>
void pixel_shuffle_copy(const T* x, index_t B, index_t C, index_t H, index_t W, index_t s,
                        T* y) {
  // x: [B, C*s*s, H, W] -> y: [B, C, H*s, W*s]
  const index_t OC = C, OH = H * s, OW = W * s;
  for (index_t b = 0; b < B; ++b)
    for (index_t c = 0; c < OC; ++c)
      for (index_t dy = 0; dy < s; ++dy)
        for (index_t dx = 0; dx < s; ++dx) {
          const T* src = x + ((b * C * s * s) + c * s * s + dy * s + dx) * H * W;
          for (index_t h = 0; h < H; ++h) {
            T* dst = y + ((b * OC + c) * OH + h * s + dy) * OW + dx;
            for (index_t w = 0; w < W; ++w) dst[w * s] = src[h * W + w];
          }
        }
}

template <class T>
void pixel_unshuffle_copy(const T* y, index_t B, index_t C, index_t H, index_t W, index_t s,
                          T* x) {
  // inverse of pixel_shuffle_copy (same parameter meaning)
  const index_t OC = C, OH = H * s, OW = W * s;
  for (index_t b = 0; b < B; ++b)
    for (index_t c = 0; c < OC; ++c)
      for (index_t dy = 0; dy < s; ++dy)
        for (index_t dx = 0; dx < s; ++dx) {
          T* dst = x + ((b * C * s * s) + c * s * s + dy * s + dx) * H * W;
          for (index_t h = 0; h < H; ++h) {
            const T* src = y + ((b * OC + c) * OH + h * s + dy) * OW + dx;
            for (index_t w = 0; w < W; ++w) dst[h * W + w] = src[w * s];
          }
        }
}

}  // namespace detail

// depth-to-space: [B, C*s^2, H, W] -> [B, C, sH, sW]
template <class T>
TensorT<T> pixel_shuffle(const TensorT<T>& x, index_t s) {
  LCE_CHECK(x.rank() == 4, "pixel_shuffle expects BCHW");
  LCE_CHECK(s >= 1, "scale must be >= 1");
  const index_t B = x.dim(0), CS = x.dim(1), H = x.dim(2), W = x.dim(3);
  LCE_CHECK(CS % (s * s) == 0, "channel count ", CS, " not divisible by s^2=", s * s);
  const index_t C = CS / (s * s);
  TensorT<T> y(Shape{B, C, H * s, W * s});
  detail::pixel_shuffle_copy(x.data(), B, C, H, W, s, y.data());
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      Shape xs = x.shape();
      tp->record(y, {px}, [xs, B, C, H, W, s](const TensorT<T>& g) {
        TensorT<T> gx(xs);
        detail::pixel_unshuffle_copy(g.data(), B, C, H, W, s, gx.data());
        return std::vector<TensorT<T>>{gx};
      });
    }
  }
  return y;
}

// space-to-depth inverse: [B, C, sH, sW] -> [B, C*s^2, H, W]
template <class T>
TensorT<T> pixel_unshuffle(const TensorT<T>& x, index_t s) {
  LCE_CHECK(x.rank() == 4, "pixel_unshuffle expects BCHW");
  const index_t B = x.dim(0), C = x.dim(1), OH = x.dim(2), OW = x.dim(3);
  LCE_CHECK(OH % s == 0 && OW % s == 0, "spatial extents not divisible by s");
  const index_t H = OH / s, W = OW / s;
  TensorT<T> y(Shape{B, C * s * s, H, W});
  detail::pixel_unshuffle_copy(x.data(), B, C, H, W, s, y.data());
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      tp->record(y, {px}, [B, C, H, W, s](const TensorT<T>& g) {
        TensorT<T> gx(Shape{B, C, H * s, W * s});
        detail::pixel_shuffle_copy(g.data(), B, C, H, W, s, gx.data());
        return std::vector<TensorT<T>>{gx};
      });
    }
  }
  return y;
}

// [B, C, H, W] -> [B*nH*nW, win*win, C] token windows (H, W divisible by win)
template <class T>
TensorT<T> window_partition(const TensorT<T>& x, index_t win) {
  LCE_CHECK(x.rank() == 4, "window_partition expects BCHW");
  const index_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  LCE_CHECK(H % win == 0 && W % win == 0, "extents ", H, "x", W, " not divisible by window ",
            win);
  const index_t nH = H / win, nW = W / win, N = win * win;
  TensorT<T> y(Shape{B * nH * nW, N, C});
  const T* xp = x.data();
  T* yp = y.data();
  for (index_t b = 0; b < B; ++b)
    for (index_t c = 0; c < C; ++c)
      for (index_t h = 0; h < H; ++h)
        for (index_t w = 0; w < W; ++w) {
          const index_t g = (b * nH + h / win) * nW + w / win;
          const index_t t = (h % win) * win + (w % win);
          yp[(g * N + t) * C + c] = xp[((b * C + c) * H + h) * W + w];
        }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      Shape xs = x.shape();
      tp->record(y, {px}, [xs, win, B, C, H, W, nH, nW, N](const TensorT<T>& g) {
        TensorT<T> gx(xs);
        for (index_t b = 0; b < B; ++b)
          for (index_t c = 0; c < C; ++c)
            for (index_t h = 0; h < H; ++h)
              for (index_t w = 0; w < W; ++w) {
                const index_t gi = (b * nH + h / win) * nW + w / win;
                const index_t t = (h % win) * win + (w % win);
                gx.data()[((b * C + c) * H + h) * W + w] = g.data()[(gi * N + t) * C + c];
              }
        return std::vector<TensorT<T>>{gx};
      });
    }
  }
  return y;
}

// inverse of window_partition
template <class T>
TensorT<T> window_merge(const TensorT<T>& x, index_t B, index_t C, index_t H, index_t W,
                        index_t win) {
  LCE_CHECK(x.rank() == 3, "window_merge expects [groups, tokens, C]");
  const index_t nH = H / win, nW = W / win, N = win * win;
  LCE_CHECK(x.dim(0) == B * nH * nW && x.dim(1) == N && x.dim(2) == C,
            "window_merge extent mismatch");
  TensorT<T> y(Shape{B, C, H, W});
  const T* xp = x.data();
  T* yp = y.data();
  for (index_t b = 0; b < B; ++b)
    for (index_t c = 0; c < C; ++c)
      for (index_t h = 0; h < H; ++h)
        for (index_t w = 0; w < W; ++w) {
          const index_t g = (b * nH + h / win) * nW + w / win;
          const index_t t = (h % win) * win + (w % win);
          yp[((b * C + c) * H + h) * W + w] = xp[(g * N + t) * C + c];
        }
  if (auto* tp = TapeT<T>::current()) {
    int px = tp->track(x);
    if (px >= 0) {
      Shape xs = x.shape();
      tp->record(y, {px}, [xs, win, B, C, H, W, nH, nW, N](const TensorT<T>& g) {
        TensorT<T> gx(xs);
        for (index_t b = 0; b < B; ++b)
          for (index_t c = 0; c < C; ++c)
            for (index_t h = 0; h < H; ++h)
              for (index_t w = 0; w < W; ++w) {
                const index_t gi = (b * nH + h / win) * nW + w / win;
                const index_t t = (h % win) * win + (w % win);
                gx.data()[(gi * N + t) * C + c] = g.data()[((b * C + c) * H + h) * W + w];
              }
        return std::vector<TensorT<T>>{gx};
      });
    }
  }
  return y;
}

// ------------------------------------------------------------------
// finite differences — the independent gradient oracle
// ------------------------------------------------------------------

// central-difference gradient of a scalar-valued deterministic function;
// runs f outside any tape
template <class T>
TensorT<T> finite_diff_grad(const std::function<TensorT<T>(const TensorT<T>&)>& f,
                            const TensorT<T>& x, T h) {
  typename TapeT<T>::Pause pause;  // oracle must never hit the tape
  TensorT<T> g(x.shape());
  TensorT<T> probe = x.clone();
  for (index_t i = 0; i < x.numel(); ++i) {
    const T saved = probe[i];
    probe[i] = saved + h;
    TensorT<T> up = f(probe);
    probe[i] = saved - h;
    TensorT<T> dn = f(probe);
    probe[i] = saved;
    LCE_CHECK(up.numel() == 1 && dn.numel() == 1, "finite_diff_grad needs scalar f");
    g[i] = (up[0] - dn[0]) / (T(2) * h);
  }
  return g;
}

}  // namespace lce
