#pragma once

// Network blocks and the assembled correction + super-resolution model:
// residual channel-attention corrector, frequency attention (half-spectrum
// gating), shifted-window self-attention, their mixture block/groups, and
// parameter / mult-adds bookkeeping. Every trainable value lives in a named
// ParamStore entry; freezing toggles requires_grad so frozen parameters never
// receive gradients.

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lce/fft.hpp"
#include "lce/ops.hpp"
#include "lce/rng.hpp"
#include "lce/tensor.hpp"

namespace lce {

// ------------------------------------------------------------------
// configuration
// ------------------------------------------------------------------

struct CorrectorConfig {
  int channels = 64;
  int num_rg = 4;
  int rcabs_per_rg = 10;
  int reduction = 16;  // channel-attention squeeze

  void validate() const {
    LCE_CHECK(channels > 0 && num_rg > 0 && rcabs_per_rg > 0 && reduction > 0,
              "corrector config fields must be positive");
    LCE_CHECK(channels % reduction == 0, "reduction ", reduction,
              " must divide channels ", channels);
  }
};

struct SrConfig {
  int channels = 144;
  int num_fsag = 6;
  int fsabs_per_fsag = 6;
  int heads = 6;
  index_t window = 16;
  double mlp_ratio = 2.0;
  int fab_squeeze_channels = 6;
  index_t scale = 2;

  void validate() const {
    LCE_CHECK(channels > 0 && num_fsag > 0 && fsabs_per_fsag > 0 && heads > 0,
              "resolver config fields must be positive");
    LCE_CHECK(channels % heads == 0, "heads ", heads, " must divide channels ",
              channels);
    LCE_CHECK(window >= 2 && window % 2 == 0, "window must be an even size >= 2, got ",
              window);
    LCE_CHECK(mlp_ratio > 0, "mlp_ratio must be positive");
    LCE_CHECK(fab_squeeze_channels >= 1, "fab_squeeze_channels must be >= 1");
    LCE_CHECK(scale == 1 || scale == 2 || scale == 4, "scale must be 1, 2 or 4");
  }
};

enum class PipelineMode { kCase1 = 1, kCase2 = 2, kCase3 = 3 };

inline PipelineMode pipeline_mode_from(const std::string& s) {
  if (s == "case1") return PipelineMode::kCase1;
  if (s == "case2") return PipelineMode::kCase2;
  if (s == "case3") return PipelineMode::kCase3;
  throw ConfigError("mode must be case1|case2|case3, got '" + s + "'");
}

inline const char* pipeline_mode_name(PipelineMode m) {
  switch (m) {
    case PipelineMode::kCase1: return "case1";
    case PipelineMode::kCase2: return "case2";
    default: return "case3";
  }
}

// ------------------------------------------------------------------
// named parameter registry
// ------------------------------------------------------------------

template <class T>
class ParamStoreT {
 public:
  struct Entry {
    std::string name;
    TensorT<T> value;  // aliases the tensor the blocks hold
  };

  TensorT<T> add(const std::string& name, TensorT<T> value) {
    LCE_CHECK(byname_.count(name) == 0, "duplicate parameter name '", name, "'");
    value.set_requires_grad(true);
    byname_[name] = entries_.size();
    entries_.push_back({name, value});
    return value;
  }

  bool has(const std::string& name) const { return byname_.count(name) != 0; }

  TensorT<T> get(const std::string& name) const {
    auto it = byname_.find(name);
    LCE_CHECK(it != byname_.end(), "no parameter named '", name, "'");
    return entries_[it->second].value;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  // trainable == requires_grad; freezing flips it off
  void set_trainable_prefix(const std::string& prefix, bool trainable) {
    for (auto& e : entries_)
      if (e.name.rfind(prefix, 0) == 0) e.value.set_requires_grad(trainable);
  }

  std::int64_t scalar_count(const std::string& prefix = "",
                            bool trainable_only = false) const {
    std::int64_t n = 0;
    for (const auto& e : entries_)
      if (e.name.rfind(prefix, 0) == 0 && (!trainable_only || e.value.requires_grad()))
        n += e.value.numel();
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> byname_;
};

using ParamStore = ParamStoreT<float>;

// ------------------------------------------------------------------
// initialization
// ------------------------------------------------------------------

template <class T>
TensorT<T> init_uniform(Shape shape, double bound, Rng& rng) {
  TensorT<T> t(std::move(shape));
  for (index_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
TensorT<T> init_trunc_normal(Shape shape, double stddev, Rng& rng) {
  TensorT<T> t(std::move(shape));
  for (index_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.trunc_normal(stddev));
  return t;
}

// builder: carries the store, the init RNG, and a dotted name prefix
template <class T>
struct NetBuilderT {
  ParamStoreT<T>* store;
  Rng* rng;
  std::string prefix;

  NetBuilderT sub(const std::string& name) const {
    return {store, rng, prefix + name + "."};
  }
  TensorT<T> fanin_uniform(const std::string& name, Shape shape, index_t fan_in) {
    return store->add(prefix + name,
                      init_uniform<T>(std::move(shape), 1.0 / std::sqrt(double(fan_in)), *rng));
  }
  TensorT<T> trunc_normal(const std::string& name, Shape shape, double stddev = 0.02) {
    return store->add(prefix + name, init_trunc_normal<T>(std::move(shape), stddev, *rng));
  }
  TensorT<T> constant(const std::string& name, Shape shape, T v) {
    return store->add(prefix + name, TensorT<T>::full(std::move(shape), v));
  }
};

// ------------------------------------------------------------------
// primitive layers
// ------------------------------------------------------------------

template <class T>
struct Conv2dT {
  TensorT<T> w, b;
};

enum class ConvInit { kFanIn, kTruncNormal };

template <class T>
Conv2dT<T> make_conv(NetBuilderT<T> b, index_t out_c, index_t in_c, index_t k,
                     ConvInit init = ConvInit::kFanIn) {
  Conv2dT<T> c;
  const index_t fan_in = in_c * k * k;
  if (init == ConvInit::kFanIn)
    c.w = b.fanin_uniform("w", Shape{out_c, in_c, k, k}, fan_in);
  else
    c.w = b.trunc_normal("w", Shape{out_c, in_c, k, k});
  c.b = b.store->add(b.prefix + "b", TensorT<T>::zeros(Shape{out_c}));
  return c;
}

template <class T>
TensorT<T> conv_fwd(const Conv2dT<T>& c, const TensorT<T>& x, index_t stride = 1,
                    ConvPad pad = ConvPad::kZero) {
  return conv2d(x, c.w, &c.b, stride, pad);
}

template <class T>
struct DenseT {
  TensorT<T> w, b;
};

template <class T>
DenseT<T> make_dense(NetBuilderT<T> b, index_t in_f, index_t out_f) {
  DenseT<T> d;
  d.w = b.trunc_normal("w", Shape{in_f, out_f});
  d.b = b.store->add(b.prefix + "b", TensorT<T>::zeros(Shape{out_f}));
  return d;
}

template <class T>
struct LayerNormT {
  TensorT<T> gamma, beta;
};

template <class T>
LayerNormT<T> make_layer_norm(NetBuilderT<T> b, index_t c) {
  LayerNormT<T> ln;
  ln.gamma = b.store->add(b.prefix + "gamma", TensorT<T>::ones(Shape{c}));
  ln.beta = b.store->add(b.prefix + "beta", TensorT<T>::zeros(Shape{c}));
  return ln;
}

// channel-axis LayerNorm for BCHW features (per-pixel statistics over C)
template <class T>
TensorT<T> ln_fwd(const LayerNormT<T>& ln, const TensorT<T>& x) {
  return layer_norm(x, ln.gamma, ln.beta, /*axis=*/1);
}

// ------------------------------------------------------------------
// residual blocks
// ------------------------------------------------------------------

// conv3x3 - ReLU - conv3x3 + skip
template <class T>
struct ResBlockT {
  Conv2dT<T> c1, c2;
};

template <class T>
ResBlockT<T> make_resblock(NetBuilderT<T> b, index_t c) {
  return {make_conv(b.sub("c1"), c, c, 3), make_conv(b.sub("c2"), c, c, 3)};
}

template <class T>
TensorT<T> rb_fwd(const ResBlockT<T>& m, const TensorT<T>& x) {
  return add(x, conv_fwd(m.c2, relu(conv_fwd(m.c1, x))));
}

// conv-ReLU-conv, squeeze/excite channel attention, skip
template <class T>
struct RcabT {
  Conv2dT<T> c1, c2, squeeze, excite;
};

template <class T>
RcabT<T> make_rcab(NetBuilderT<T> b, index_t c, index_t reduction) {
  RcabT<T> m;
  m.c1 = make_conv(b.sub("c1"), c, c, 3);
  m.c2 = make_conv(b.sub("c2"), c, c, 3);
  m.squeeze = make_conv(b.sub("squeeze"), c / reduction, c, 1);
  m.excite = make_conv(b.sub("excite"), c, c / reduction, 1);
  return m;
}

template <class T>
TensorT<T> rcab_fwd(const RcabT<T>& m, const TensorT<T>& x) {
  TensorT<T> h = conv_fwd(m.c2, relu(conv_fwd(m.c1, x)));
  TensorT<T> s = sigmoid(conv_fwd(m.excite, relu(conv_fwd(m.squeeze, global_avg_pool(h)))));
  return add(x, mul_bcast_spatial(h, s));
}

template <class T>
struct ResGroupT {
  std::vector<RcabT<T>> rcabs;
  Conv2dT<T> tail;
};

template <class T>
ResGroupT<T> make_resgroup(NetBuilderT<T> b, index_t c, int n_rcab, index_t reduction) {
  ResGroupT<T> g;
  for (int i = 0; i < n_rcab; ++i)
    g.rcabs.push_back(make_rcab(b.sub("rcab" + std::to_string(i)), c, reduction));
  g.tail = make_conv(b.sub("tail"), c, c, 3);
  return g;
}

template <class T>
TensorT<T> rg_fwd(const ResGroupT<T>& m, const TensorT<T>& x) {
  TensorT<T> h = x;
  for (const auto& r : m.rcabs) h = rcab_fwd(r, h);
  return add(x, conv_fwd(m.tail, h));
}

// ------------------------------------------------------------------
// corrector: 7x7 head + 2 RBs -> residual groups -> conv + long skip -> conv
// ------------------------------------------------------------------

template <class T>
struct CorrectorT {
  CorrectorConfig cfg;
  Conv2dT<T> head;
  ResBlockT<T> rb1, rb2;
  std::vector<ResGroupT<T>> groups;
  Conv2dT<T> conv1, conv2;
};

template <class T>
CorrectorT<T> make_corrector(NetBuilderT<T> b, const CorrectorConfig& cfg) {
  cfg.validate();
  CorrectorT<T> m;
  m.cfg = cfg;
  const index_t c = cfg.channels;
  m.head = make_conv(b.sub("head"), c, 3, 7);
  m.rb1 = make_resblock(b.sub("rb1"), c);
  m.rb2 = make_resblock(b.sub("rb2"), c);
  for (int i = 0; i < cfg.num_rg; ++i)
    m.groups.push_back(
        make_resgroup(b.sub("rg" + std::to_string(i)), c, cfg.rcabs_per_rg, cfg.reduction));
  m.conv1 = make_conv(b.sub("conv1"), c, c, 3);
  m.conv2 = make_conv(b.sub("conv2"), 3, c, 3);
  return m;
}

template <class T>
TensorT<T> corrector_fwd(const CorrectorT<T>& m, const TensorT<T>& lr) {
  LCE_CHECK(lr.rank() == 4 && lr.dim(1) == 3, "corrector expects [B,3,H,W], got ",
            shape_str(lr.shape()));
  TensorT<T> f0 = rb_fwd(m.rb2, rb_fwd(m.rb1, conv_fwd(m.head, lr)));
  TensorT<T> f = f0;
  for (const auto& g : m.groups) f = rg_fwd(g, f);
  return conv_fwd(m.conv2, add(conv_fwd(m.conv1, f), f0));
}

// ------------------------------------------------------------------
// frequency attention: squeeze convs -> half spectrum -> ReLU ->
// real-max / imag-avg channel pools -> 7x7 map -> sigmoid gate -> inverse
// ------------------------------------------------------------------

template <class T>
struct FreqAttnT {
  Conv2dT<T> reduce, expand, map;
  TensorT<T> alpha;  // learnable branch weight, init 0.01
};

template <class T>
FreqAttnT<T> make_freq_attn(NetBuilderT<T> b, index_t c, index_t squeeze) {
  FreqAttnT<T> m;
  m.reduce = make_conv(b.sub("reduce"), squeeze, c, 3);
  m.expand = make_conv(b.sub("expand"), c, squeeze, 3);
  m.map = make_conv(b.sub("map"), 1, 2, 7);
  m.alpha = b.constant("alpha", Shape{1}, T(0.01));
  return m;
}

template <class T>
TensorT<T> fab_fwd(const FreqAttnT<T>& m, const TensorT<T>& x) {
  TensorT<T> y1 = conv_fwd(m.expand, conv_fwd(m.reduce, x));
  SpectrumT<T> spec = rfft2(y1);
  TensorT<T> re = relu(spec.real), im = relu(spec.imag);
  TensorT<T> gate = sigmoid(conv_fwd(
      m.map, concat_axis(pool_channel(re, PoolMode::kMax), pool_channel(im, PoolMode::kAvg), 1)));
  SpectrumT<T> scaled;
  scaled.real = mul_bcast_channel(re, gate);
  scaled.imag = mul_bcast_channel(im, gate);
  scaled.original_width = x.dim(3);
  return irfft2(scaled);
}

// ------------------------------------------------------------------
// shifted-window multi-head self-attention
// ------------------------------------------------------------------

inline std::vector<std::int32_t> relative_position_index(index_t win) {
  const index_t n = win * win;
  std::vector<std::int32_t> idx(static_cast<size_t>(n * n));
  for (index_t i = 0; i < n; ++i) {
    const index_t yi = i / win, xi = i % win;
    for (index_t j = 0; j < n; ++j) {
      const index_t yj = j / win, xj = j % win;
      idx[static_cast<size_t>(i * n + j)] =
          std::int32_t((yi - yj + win - 1) * (2 * win - 1) + (xi - xj + win - 1));
    }
  }
  return idx;
}

// 0 / -100 additive mask for the shifted layout: one [N,N] tile per window
// position of an H x W feature map
template <class T>
TensorT<T> shifted_window_mask(index_t H, index_t W, index_t win) {
  const index_t s = win / 2, n = win * win;
  std::vector<int> group(static_cast<size_t>(H * W));
  auto bands = [&](index_t extent) {
    // [0, extent-win), [extent-win, extent-s), [extent-s, extent)
    return std::vector<index_t>{0, extent - win, extent - s, extent};
  };
  const auto hb = bands(H), wb = bands(W);
  int id = 0;
  for (int hi = 0; hi < 3; ++hi)
    for (int wi = 0; wi < 3; ++wi) {
      for (index_t h = std::max<index_t>(hb[size_t(hi)], 0); h < hb[size_t(hi) + 1]; ++h)
        for (index_t w = std::max<index_t>(wb[size_t(wi)], 0); w < wb[size_t(wi) + 1]; ++w)
          group[static_cast<size_t>(h * W + w)] = id;
      ++id;
    }
  const index_t nh = H / win, nw = W / win;
  TensorT<T> mask(Shape{nh * nw, n, n});
  for (index_t t = 0; t < nh * nw; ++t) {
    const index_t oy = (t / nw) * win, ox = (t % nw) * win;
    std::vector<int> ids(static_cast<size_t>(n));
    for (index_t k = 0; k < n; ++k)
      ids[static_cast<size_t>(k)] =
          group[static_cast<size_t>((oy + k / win) * W + ox + k % win)];
    for (index_t i = 0; i < n; ++i)
      for (index_t j = 0; j < n; ++j)
        mask[(t * n + i) * n + j] =
            ids[static_cast<size_t>(i)] == ids[static_cast<size_t>(j)] ? T(0) : T(-100);
  }
  return mask;
}

template <class T>
struct WindowAttnT {
  index_t window = 8;
  int heads = 1;
  DenseT<T> qkv, proj;
  TensorT<T> bias_table;               // [(2w-1)^2, heads]
  std::vector<std::int32_t> rel_idx;   // N*N
};

template <class T>
WindowAttnT<T> make_window_attn(NetBuilderT<T> b, index_t c, int heads, index_t window) {
  WindowAttnT<T> m;
  m.window = window;
  m.heads = heads;
  m.qkv = make_dense(b.sub("qkv"), c, 3 * c);
  m.proj = make_dense(b.sub("proj"), c, c);
  m.bias_table =
      b.trunc_normal("bias_table", Shape{(2 * window - 1) * (2 * window - 1), heads});
  m.rel_idx = relative_position_index(window);
  return m;
}

// attn_out, when given, receives the softmax weights [G, heads, N, N]
template <class T>
TensorT<T> wmsa_fwd(const WindowAttnT<T>& m, const TensorT<T>& x, bool shift,
                    TensorT<T>* attn_out = nullptr) {
  const index_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const index_t win = m.window, s = win / 2;
  const index_t ph = (win - H % win) % win, pw = (win - W % win) % win;
  TensorT<T> h = x;
  if (ph > 0 || pw > 0) h = pad2d(h, 0, ph, 0, pw, PadKind::kReflect);
  const index_t Hp = H + ph, Wp = W + pw;
  LCE_CHECK(Hp >= win && Wp >= win, "feature ", H, "x", W, " too small for window ", win);
  if (shift) h = roll2d(h, -s, -s);

  TensorT<T> tokens = window_partition(h, win);  // [G, N, C]
  const index_t G = tokens.dim(0), N = tokens.dim(1);
  const index_t hd = C / m.heads;

  TensorT<T> qkv = linear(tokens, m.qkv.w, &m.qkv.b);          // [G, N, 3C]
  qkv = permute(reshape(qkv, Shape{G, N, 3, m.heads, hd}), {2, 0, 3, 1, 4});
  TensorT<T> q = reshape(slice_axis(qkv, 0, 0, 1), Shape{G, m.heads, N, hd});
  TensorT<T> k = reshape(slice_axis(qkv, 0, 1, 1), Shape{G, m.heads, N, hd});
  TensorT<T> v = reshape(slice_axis(qkv, 0, 2, 1), Shape{G, m.heads, N, hd});

  TensorT<T> scores = mul_scalar(matmul_nt(q, k), T(1.0 / std::sqrt(double(hd))));
  scores = add_rel_pos_bias(scores, m.bias_table, m.rel_idx);
  if (shift) scores = add_window_mask(scores, shifted_window_mask<T>(Hp, Wp, win));
  TensorT<T> attn = softmax(scores, 3);
  if (attn_out) *attn_out = attn;

  TensorT<T> out = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), Shape{G, N, C});
  out = linear(out, m.proj.w, &m.proj.b);
  TensorT<T> y = window_merge(out, B, C, Hp, Wp, win);
  if (shift) y = roll2d(y, s, s);
  if (ph > 0 || pw > 0) y = crop2d(y, 0, 0, H, W);
  return y;
}

// ------------------------------------------------------------------
// transformer mixture block and group
// ------------------------------------------------------------------

template <class T>
struct MlpT {
  Conv2dT<T> fc1, fc2;  // 1x1 convs == per-token linears
};

template <class T>
MlpT<T> make_mlp(NetBuilderT<T> b, index_t c, double ratio) {
  const index_t hidden = std::max<index_t>(1, index_t(std::lround(double(c) * ratio)));
  MlpT<T> m;
  m.fc1 = make_conv(b.sub("fc1"), hidden, c, 1, ConvInit::kTruncNormal);
  m.fc2 = make_conv(b.sub("fc2"), c, hidden, 1, ConvInit::kTruncNormal);
  return m;
}

template <class T>
TensorT<T> mlp_fwd(const MlpT<T>& m, const TensorT<T>& x) {
  return conv_fwd(m.fc2, gelu(conv_fwd(m.fc1, x)));
}

// x1 = LN(x); x2 = W-MSA(x1) + alpha*FAB(x1) + x1; out = MLP(LN(x2)) + x2
template <class T>
struct FsabT {
  LayerNormT<T> ln1, ln2;
  WindowAttnT<T> attn;
  FreqAttnT<T> fab;
  MlpT<T> mlp;
  bool shift = false;
};

template <class T>
FsabT<T> make_fsab(NetBuilderT<T> b, const SrConfig& cfg, bool shift) {
  FsabT<T> m;
  m.ln1 = make_layer_norm(b.sub("ln1"), cfg.channels);
  m.ln2 = make_layer_norm(b.sub("ln2"), cfg.channels);
  m.attn = make_window_attn(b.sub("attn"), cfg.channels, cfg.heads, cfg.window);
  m.fab = make_freq_attn(b.sub("fab"), cfg.channels, cfg.fab_squeeze_channels);
  m.mlp = make_mlp(b.sub("mlp"), cfg.channels, cfg.mlp_ratio);
  m.shift = shift;
  return m;
}

template <class T>
TensorT<T> fsab_fwd(const FsabT<T>& m, const TensorT<T>& x) {
  TensorT<T> x1 = ln_fwd(m.ln1, x);
  TensorT<T> x2 = add(add(wmsa_fwd(m.attn, x1, m.shift),
                          scale_by(fab_fwd(m.fab, x1), m.fab.alpha)),
                      x1);
  return add(mlp_fwd(m.mlp, ln_fwd(m.ln2, x2)), x2);
}

// several mixture blocks (alternating shift), a 3x3 conv, a skip
template <class T>
struct FsagT {
  std::vector<FsabT<T>> blocks;
  Conv2dT<T> conv;
};

template <class T>
FsagT<T> make_fsag(NetBuilderT<T> b, const SrConfig& cfg) {
  FsagT<T> g;
  for (int i = 0; i < cfg.fsabs_per_fsag; ++i)
    g.blocks.push_back(make_fsab(b.sub("b" + std::to_string(i)), cfg, i % 2 == 1));
  g.conv = make_conv(b.sub("conv"), cfg.channels, cfg.channels, 3);
  return g;
}

template <class T>
TensorT<T> fsag_fwd(const FsagT<T>& m, const TensorT<T>& x) {
  TensorT<T> h = x;
  for (const auto& blk : m.blocks) h = fsab_fwd(blk, h);
  return add(x, conv_fwd(m.conv, h));
}

// ------------------------------------------------------------------
// assembled model
// ------------------------------------------------------------------

template <class T>
struct LceModelT {
  PipelineMode mode = PipelineMode::kCase3;
  CorrectorConfig ccfg;
  SrConfig scfg;
  ParamStoreT<T> params;

  CorrectorT<T> corrector;                       // case2, case3
  Conv2dT<T> clr_entry;                          // case3
  FreqAttnT<T> clr_fab1, clr_fab2;               // case3 (own alphas)
  ResBlockT<T> clr_rb;                           // case3
  Conv2dT<T> lr_entry;                           // all modes
  ResBlockT<T> lr_rb;                            // all modes
  Conv2dT<T> fuse;                               // case3
  std::vector<FsagT<T>> groups;
  Conv2dT<T> up1, up2, out_conv;                 // up2 only at scale 4

  bool has_corrector() const { return mode != PipelineMode::kCase1; }
  bool has_clr_branch() const { return mode == PipelineMode::kCase3; }
};

template <class T>
LceModelT<T> make_lce_model(const CorrectorConfig& ccfg, const SrConfig& scfg,
                            PipelineMode mode, std::uint64_t seed) {
  ccfg.validate();
  scfg.validate();
  LceModelT<T> m;
  m.mode = mode;
  m.ccfg = ccfg;
  m.scfg = scfg;
  Rng rng(derive_seed(seed, 0x6d6f64656cull));
  NetBuilderT<T> b{&m.params, &rng, ""};

  const index_t c = scfg.channels;
  if (m.has_corrector()) m.corrector = make_corrector(b.sub("corrector"), ccfg);
  if (m.has_clr_branch()) {
    m.clr_entry = make_conv(b.sub("clr_entry"), c, 3, 3);
    m.clr_fab1 = make_freq_attn(b.sub("clr_fab1"), c, scfg.fab_squeeze_channels);
    m.clr_fab2 = make_freq_attn(b.sub("clr_fab2"), c, scfg.fab_squeeze_channels);
    m.clr_rb = make_resblock(b.sub("clr_rb"), c);
  }
  m.lr_entry = make_conv(b.sub("lr_entry"), c, 3, 3);
  m.lr_rb = make_resblock(b.sub("lr_rb"), c);
  if (m.has_clr_branch()) m.fuse = make_conv(b.sub("fuse"), c, 2 * c, 3);
  for (int i = 0; i < scfg.num_fsag; ++i)
    m.groups.push_back(make_fsag(b.sub("body.g" + std::to_string(i)), scfg));
  if (scfg.scale >= 2) m.up1 = make_conv(b.sub("up1"), 4 * c, c, 3);
  if (scfg.scale == 4) m.up2 = make_conv(b.sub("up2"), 4 * c, c, 3);
  m.out_conv = make_conv(b.sub("out"), 3, c, 3);
  return m;
}

struct LceOutputs {
  // sr: upscaled result; clr: corrector estimate (empty in case1)
};

template <class T>
struct LceOutputsT {
  TensorT<T> sr, clr;
};

// extractor FABs apply as x + alpha * FAB(x)
template <class T>
TensorT<T> extractor_fab_fwd(const FreqAttnT<T>& m, const TensorT<T>& x) {
  return add(x, scale_by(fab_fwd(m, x), m.alpha));
}

// forward with an externally supplied correction (training-time cache for a
// frozen corrector, or the live corrector output)
template <class T>
LceOutputsT<T> lce_forward_with_clr(const LceModelT<T>& m, const TensorT<T>& lr,
                                    const TensorT<T>& clr) {
  LCE_CHECK(lr.rank() == 4 && lr.dim(1) == 3, "resolver expects [B,3,H,W], got ",
            shape_str(lr.shape()));
  LceOutputsT<T> out;
  out.clr = clr;

  TensorT<T> f0;
  if (m.mode == PipelineMode::kCase1) {
    f0 = rb_fwd(m.lr_rb, conv_fwd(m.lr_entry, lr));
  } else if (m.mode == PipelineMode::kCase2) {
    // the corrected image replaces the LR input of the plain pipeline
    f0 = rb_fwd(m.lr_rb, conv_fwd(m.lr_entry, clr));
  } else {
    TensorT<T> fclr = conv_fwd(m.clr_entry, clr);
    fclr = extractor_fab_fwd(m.clr_fab2, extractor_fab_fwd(m.clr_fab1, fclr));
    fclr = rb_fwd(m.clr_rb, fclr);
    TensorT<T> flr = rb_fwd(m.lr_rb, conv_fwd(m.lr_entry, lr));
    f0 = conv_fwd(m.fuse, concat_axis(fclr, flr, 1));
  }

  TensorT<T> f = f0;
  for (const auto& g : m.groups) f = fsag_fwd(g, f);
  f = add(f, f0);  // long skip before upsampling

  if (m.scfg.scale >= 2) f = pixel_shuffle(conv_fwd(m.up1, f), 2);
  if (m.scfg.scale == 4) f = pixel_shuffle(conv_fwd(m.up2, f), 2);
  out.sr = conv_fwd(m.out_conv, f);
  return out;
}

template <class T>
LceOutputsT<T> lce_forward(const LceModelT<T>& m, const TensorT<T>& lr) {
  TensorT<T> clr;
  if (m.has_corrector()) clr = corrector_fwd(m.corrector, lr);
  return lce_forward_with_clr(m, lr, clr);
}

// ------------------------------------------------------------------
// bookkeeping: parameter and mult-adds counters
// ------------------------------------------------------------------

template <class T>
std::int64_t count_params(const LceModelT<T>& m, const std::string& prefix = "") {
  return m.params.scalar_count(prefix);
}

// Mult-adds counting rules (one multiply-accumulate = 1):
//   conv:      out_c * in_c * kh * kw * out_h * out_w
//   dense:     tokens * in_f * out_f
//   attention: qkv + scores (G*heads*N^2*hd) + weighted sum (same) + proj
//   fft:       5 * N * log2(N) per 2-D transform of N = H*W points, per
//              channel, forward and inverse alike
// Elementwise work (activations, norms, pools, gates) is not counted.
class MultAdds {
 public:
  void conv(index_t out_c, index_t in_c, index_t k, index_t h, index_t w) {
    total_ += std::int64_t(out_c) * in_c * k * k * h * w;
  }
  void dense(std::int64_t tokens, index_t in_f, index_t out_f) {
    total_ += tokens * in_f * out_f;
  }
  void fft(index_t channels, index_t h, index_t w) {
    const double n = double(h) * double(w);
    total_ += std::int64_t(double(channels) * 5.0 * n * std::log2(std::max(n, 2.0)));
  }
  void raw(std::int64_t v) { total_ += v; }
  std::int64_t total() const { return total_; }

 private:
  std::int64_t total_ = 0;
};

template <class T>
void fab_multadds(const LceModelT<T>& m, index_t h, index_t w, MultAdds& acc) {
  const index_t c = m.scfg.channels, s = m.scfg.fab_squeeze_channels;
  const index_t w2 = w / 2 + 1;
  acc.conv(s, c, 3, h, w);
  acc.conv(c, s, 3, h, w);
  acc.fft(c, h, w);        // forward
  acc.conv(1, 2, 7, h, w2);
  acc.fft(c, h, w);        // inverse
}

template <class T>
void wmsa_multadds(const LceModelT<T>& m, index_t h, index_t w, MultAdds& acc) {
  const index_t c = m.scfg.channels, win = m.scfg.window;
  const index_t hp = (h + win - 1) / win * win, wp = (w + win - 1) / win * win;
  const std::int64_t tokens = std::int64_t(hp) * wp;
  const index_t n = win * win;
  acc.dense(tokens, c, 3 * c);                    // qkv
  acc.raw(2 * tokens * std::int64_t(n) * c);      // scores + weighted sum
  acc.dense(tokens, c, c);                        // proj
}

template <class T>
void fsab_multadds(const LceModelT<T>& m, index_t h, index_t w, MultAdds& acc) {
  const index_t c = m.scfg.channels;
  const index_t hidden = std::max<index_t>(1, index_t(std::lround(double(c) * m.scfg.mlp_ratio)));
  wmsa_multadds(m, h, w, acc);
  fab_multadds(m, h, w, acc);
  acc.conv(hidden, c, 1, h, w);
  acc.conv(c, hidden, 1, h, w);
}

template <class T>
void corrector_multadds(const LceModelT<T>& m, index_t h, index_t w, MultAdds& acc) {
  const index_t c = m.ccfg.channels, r = m.ccfg.reduction;
  acc.conv(c, 3, 7, h, w);
  for (int i = 0; i < 2; ++i) {  // entry RBs
    acc.conv(c, c, 3, h, w);
    acc.conv(c, c, 3, h, w);
  }
  for (int g = 0; g < m.ccfg.num_rg; ++g) {
    for (int i = 0; i < m.ccfg.rcabs_per_rg; ++i) {
      acc.conv(c, c, 3, h, w);
      acc.conv(c, c, 3, h, w);
      acc.raw(std::int64_t(c) * (c / r) * 2);  // squeeze/excite on pooled 1x1
    }
    acc.conv(c, c, 3, h, w);  // group tail
  }
  acc.conv(c, c, 3, h, w);
  acc.conv(3, c, 3, h, w);
}

// input is the LR size; the counter walks the same graph as the forward pass
template <class T>
std::int64_t count_multadds(const LceModelT<T>& m, index_t h, index_t w) {
  MultAdds acc;
  const index_t c = m.scfg.channels;
  if (m.has_corrector()) corrector_multadds(m, h, w, acc);
  if (m.has_clr_branch()) {
    acc.conv(c, 3, 3, h, w);  // clr entry
    fab_multadds(m, h, w, acc);
    fab_multadds(m, h, w, acc);
    acc.conv(c, c, 3, h, w);  // clr RB
    acc.conv(c, c, 3, h, w);
  }
  acc.conv(c, 3, 3, h, w);  // lr entry
  acc.conv(c, c, 3, h, w);  // lr RB
  acc.conv(c, c, 3, h, w);
  if (m.has_clr_branch()) acc.conv(c, 2 * c, 3, h, w);  // fuse
  for (const auto& g : m.groups) {
    for (size_t i = 0; i < g.blocks.size(); ++i) fsab_multadds(m, h, w, acc);
    acc.conv(c, c, 3, h, w);
  }
  index_t oh = h, ow = w;
  if (m.scfg.scale >= 2) {
    acc.conv(4 * c, c, 3, oh, ow);
    oh *= 2;
    ow *= 2;
  }
  if (m.scfg.scale == 4) {
    acc.conv(4 * c, c, 3, oh, ow);
    oh *= 2;
    ow *= 2;
  }
  acc.conv(3, c, 3, oh, ow);
  return acc.total();
}

}  // namespace lce
