#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "brve/tensor.hpp"
#include "brve/threading.hpp"

namespace brve {

// Full-precision conv parameters (stem, final projection, 1x1 fusion path).
template <typename T>
struct FpConvT {
  TensorT<T> w;  // {Co,Ci,K,K}
  TensorT<T> b;  // {Co}
  int stride = 1;
  int pad = 0;
};

// Channel-attention gate: a 1-D conv over the channel axis with the three
// distribution statistics as input channels, then a sigmoid.
template <typename T>
struct DacaParamsT {
  TensorT<T> kernel;  // {3,k}, k odd
  TensorT<T> bias;    // {1}
};

template <typename T>
struct RPReluT {
  TensorT<T> gamma;  // {Co}
  TensorT<T> zeta;   // {Co}
  TensorT<T> beta;   // {Co}
};

// One binary convolution with its learnable threshold, activation and gate
// parameters. `scale` and `wbits` are derived from `latent` and must be
// refreshed via update_derived() after every parameter change.
template <typename T>
struct BinConvT {
  TensorT<T> latent;  // {Co,Ci,K,K}, kept in full precision
  TensorT<T> alpha;   // {Ci}, per-input-channel binarization threshold
  RPReluT<T> act;
  bool has_daca = false;
  DacaParamsT<T> daca;
  int stride = 1;

  std::vector<T> scale;  // {Co}, mean |latent| per filter
  BitTensor wbits;

  std::int64_t out_channels() const { return latent.dim(0); }
  std::int64_t in_channels() const { return latent.dim(1); }
  int ksize() const { return static_cast<int>(latent.dim(2)); }
  int pad() const { return ksize() / 2; }
};

// Binary conv + 1x1 full-precision projection. The projection replaces both
// the identity shortcut and the channel gate wherever Ci != Co.
template <typename T>
struct FusionT {
  BinConvT<T> conv;  // has_daca = false
  FpConvT<T> proj;   // {Co,Ci,1,1}, stride 1
};

// Forward-saved values for the backward pass; filled only when a trace
// pointer is supplied.
template <typename T>
struct DabcTrace {
  std::vector<std::int64_t> in_shape;
  TensorT<T> aprime_pad;  // padded input minus alpha (sign source + STE mask)
  TensorT<T> conv_int;    // raw integer conv output
  TensorT<T> stat_x;      // {3,Ci} gate input statistics (daca only)
  std::vector<T> daca_out;
  bool daca_on = false;
  int pad = 0;
};

template <typename T>
struct BlockTrace {
  DabcTrace<T> dabc;
  TensorT<T> rpre_in;
};

template <typename T>
struct FusionTrace {
  DabcTrace<T> dabc;
  TensorT<T> rpre_in;
  TensorT<T> input;  // needed for the projection weight gradient
};

// ---- elementary ops ----

template <typename T>
TensorT<T> pad_spatial(const TensorT<T>& a, int pad) {
  if (a.rank() != 3) throw std::invalid_argument("pad_spatial: expected {C,H,W}");
  if (pad < 0) throw std::invalid_argument("pad_spatial: negative pad");
  if (pad == 0) return a;
  const std::int64_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  const std::int64_t hp = h + 2 * pad, wp = w + 2 * pad;
  TensorT<T> out({c, hp, wp}, T(0));
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      std::memcpy(out.data() + (ch * hp + y + pad) * wp + pad, a.data() + (ch * h + y) * w,
                  sizeof(T) * static_cast<std::size_t>(w));
  return out;
}

// Binarizes latent weights: bit = sign(w) with Sign(0) = -1, plus the
// per-filter scale S_o = ||latent_o||_1 / (Ci*K*K).
template <typename T>
std::pair<BitTensor, std::vector<T>> binarize_weights(const TensorT<T>& latent) {
  if (latent.rank() != 4) throw std::invalid_argument("binarize_weights: expected {Co,Ci,K,K}");
  if (!latent.all_finite())
    throw std::invalid_argument("binarize_weights: latent weights contain non-finite values");
  const std::int64_t co = latent.dim(0);
  const std::int64_t fan = latent.dim(1) * latent.dim(2) * latent.dim(3);
  std::vector<T> scale(static_cast<std::size_t>(co));
  for (std::int64_t o = 0; o < co; ++o) {
    double l1 = 0.0;
    const T* p = latent.data() + o * fan;
    for (std::int64_t i = 0; i < fan; ++i) l1 += std::abs(static_cast<double>(p[i]));
    scale[static_cast<std::size_t>(o)] = static_cast<T>(l1 / static_cast<double>(fan));
  }
  return {pack_sign(latent), std::move(scale)};
}

template <typename T>
void update_derived(BinConvT<T>& layer) {
  auto [bits, scale] = binarize_weights(layer.latent);
  layer.wbits = std::move(bits);
  layer.scale = std::move(scale);
}

// Shifted sign binarization: bits = Sign(a - alpha), returning the shifted
// activation as well (the backward pass and the gate both consume it).
template <typename T>
std::pair<BitTensor, TensorT<T>> rsign(const TensorT<T>& a, const TensorT<T>& alpha) {
  if (a.rank() != 3) throw std::invalid_argument("rsign: expected {C,H,W}");
  if (alpha.rank() != 1 || alpha.dim(0) != a.dim(0))
    throw std::invalid_argument("rsign: alpha length " + std::to_string(alpha.dim(0)) +
                                " does not match channel count " + std::to_string(a.dim(0)));
  TensorT<T> shifted(a.shape());
  const std::int64_t c = a.dim(0), n = a.dim(1) * a.dim(2);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const T off = alpha[ch];
    const T* src = a.data() + ch * n;
    T* dst = shifted.data() + ch * n;
    for (std::int64_t i = 0; i < n; ++i) dst[i] = src[i] - off;
  }
  return {pack_sign(shifted), std::move(shifted)};
}

// Bit-domain convolution, valid mode (spatial padding happens before
// binarization so padded pixels binarize to Sign(0 - alpha)). Output values
// are exact integers in [-Ci*K*K, Ci*K*K].
template <typename T>
TensorT<T> binary_conv2d_int(const BitTensor& a, const BitTensor& w, int stride) {
  const auto& as = a.logical_shape();
  const auto& ws = w.logical_shape();
  if (as.size() != 3) throw std::invalid_argument("binary_conv2d: activations must be {C,H,W}");
  if (ws.size() != 4) throw std::invalid_argument("binary_conv2d: weights must be {Co,Ci,K,K}");
  if (a.lanes() != w.lanes())
    throw std::invalid_argument("binary_conv2d: channel counts disagree (" +
                                std::to_string(a.lanes()) + " vs " + std::to_string(w.lanes()) +
                                ")");
  if (stride < 1) throw std::invalid_argument("binary_conv2d: stride must be >= 1");
  const std::int64_t hp = as[1], wp = as[2], k = ws[2];
  if (ws[2] != ws[3]) throw std::invalid_argument("binary_conv2d: kernel must be square");
  if (k > hp || k > wp)
    throw std::invalid_argument("binary_conv2d: kernel " + std::to_string(k) +
                                " larger than padded input " + std::to_string(hp) + "x" +
                                std::to_string(wp));
  const std::int64_t co = ws[0];
  const std::int64_t ho = (hp - k) / stride + 1;
  const std::int64_t wo = (wp - k) / stride + 1;
  TensorT<T> out({co, ho, wo});
  const std::int64_t wpr = a.words_per_row();
  const std::int64_t lanes = a.lanes();
  parallel_for(co, [&](std::int64_t ob, std::int64_t oe) {
    for (std::int64_t o = ob; o < oe; ++o) {
      T* dst = out.data() + o * ho * wo;
      for (std::int64_t y = 0; y < ho; ++y) {
        for (std::int64_t x = 0; x < wo; ++x) {
          std::int64_t acc = 0;
          for (std::int64_t ki = 0; ki < k; ++ki) {
            const std::uint64_t* arow = a.row((y * stride + ki) * wp + x * stride);
            const std::uint64_t* wrow = w.row((o * k + ki) * k);
            for (std::int64_t kj = 0; kj < k; ++kj)
              acc += signed_dot_words(arow + kj * wpr, wrow + kj * wpr, wpr, lanes);
          }
          dst[y * wo + x] = static_cast<T>(acc);
        }
      }
    }
  });
  return out;
}

// Sigmoid clamped to the open interval (0,1) so downstream invariants on the
// gate range hold even where the exponential saturates.
template <typename T>
T open_sigmoid(T z) {
  const T v = T(1) / (T(1) + std::exp(-z));
  const T lo = std::numeric_limits<T>::min();
  const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  return std::min(hi, std::max(lo, v));
}

// Gate evaluation from the {3,Ci} statistics matrix: same-padded 1-D conv
// along the channel axis evaluated at out_len positions, then sigmoid.
template <typename T>
std::vector<T> daca_gate(const TensorT<T>& stat_x, const DacaParamsT<T>& p,
                         std::int64_t out_len) {
  const std::int64_t k = p.kernel.dim(1);
  if (p.kernel.rank() != 2 || p.kernel.dim(0) != 3)
    throw std::invalid_argument("daca: kernel must be {3,k}");
  if (k % 2 == 0) throw std::invalid_argument("daca: kernel width must be odd");
  const std::int64_t c = stat_x.dim(1);
  const std::int64_t half = k / 2;
  std::vector<T> out(static_cast<std::size_t>(out_len));
  for (std::int64_t i = 0; i < out_len; ++i) {
    T z = p.bias[0];
    for (std::int64_t s = 0; s < 3; ++s)
      for (std::int64_t j = 0; j < k; ++j) {
        const std::int64_t q = i + j - half;
        if (q >= 0 && q < c) z += p.kernel(s, j) * stat_x(s, q);
      }
    out[static_cast<std::size_t>(i)] = open_sigmoid(z);
  }
  return out;
}

template <typename T>
TensorT<T> stats_matrix(const TensorT<T>& aprime) {
  const ChannelStatsT<T> st = channel_stats(aprime);
  const std::int64_t c = aprime.dim(0);
  TensorT<T> x({3, c});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    x(0, ch) = st.mean_abs.v[static_cast<std::size_t>(ch)];
    x(1, ch) = st.mean.v[static_cast<std::size_t>(ch)];
    x(2, ch) = st.stddev.v[static_cast<std::size_t>(ch)];
  }
  return x;
}

// Distribution-aware channel gate for a shifted activation: statistics,
// channel-axis conv, sigmoid. Values lie strictly inside (0,1).
template <typename T>
std::vector<T> daca(const TensorT<T>& aprime, const DacaParamsT<T>& p) {
  return daca_gate(stats_matrix(aprime), p, aprime.dim(0));
}

// Distribution-aware binary convolution: pad, shift by alpha, binarize,
// bit-domain conv, then the real-valued rescale by S and (optionally) the
// channel gate computed from the unpadded shifted activation.
template <typename T>
TensorT<T> dabc_forward(const TensorT<T>& a, const BinConvT<T>& layer, bool daca_on,
                        DabcTrace<T>* trace = nullptr) {
  if (a.rank() != 3) throw std::invalid_argument("dabc: expected {C,H,W}");
  if (a.dim(0) != layer.in_channels())
    throw std::invalid_argument("dabc: input has " + std::to_string(a.dim(0)) +
                                " channels, layer expects " +
                                std::to_string(layer.in_channels()));
  if (layer.scale.empty() || layer.wbits.rows() == 0)
    throw std::logic_error("dabc: derived weight state is stale; call update_derived()");
  const bool gate = daca_on && layer.has_daca;
  const int pad = layer.pad();

  auto [abits, aprime_pad] = rsign(pad_spatial(a, pad), layer.alpha);
  TensorT<T> out = binary_conv2d_int<T>(abits, layer.wbits, layer.stride);

  std::vector<T> dvec;
  TensorT<T> stat_x;
  if (gate) {
    // Gate statistics come from the unpadded shifted activation.
    TensorT<T> aprime({a.dim(0), a.dim(1), a.dim(2)});
    for (std::int64_t ch = 0; ch < a.dim(0); ++ch)
      for (std::int64_t y = 0; y < a.dim(1); ++y)
        std::memcpy(&aprime(ch, y, 0), &aprime_pad(ch, y + pad, pad),
                    sizeof(T) * static_cast<std::size_t>(a.dim(2)));
    stat_x = stats_matrix(aprime);
    dvec = daca_gate(stat_x, layer.daca, layer.out_channels());
  }

  if (trace) {
    trace->in_shape = a.shape();
    trace->aprime_pad = aprime_pad;
    trace->conv_int = out;
    trace->daca_on = gate;
    trace->pad = pad;
    if (gate) {
      trace->stat_x = stat_x;
      trace->daca_out = dvec;
    }
  }

  const std::int64_t co = out.dim(0), n = out.dim(1) * out.dim(2);
  for (std::int64_t o = 0; o < co; ++o) {
    const T f = layer.scale[static_cast<std::size_t>(o)] *
                (gate ? dvec[static_cast<std::size_t>(o)] : T(1));
    T* p = out.data() + o * n;
    for (std::int64_t i = 0; i < n; ++i) p[i] *= f;
  }
  return out;
}

// Shifted PReLU with per-channel offsets; the y == zeta boundary takes the
// leaky branch.
template <typename T>
TensorT<T> rprelu(const TensorT<T>& y, const RPReluT<T>& p) {
  if (y.rank() != 3) throw std::invalid_argument("rprelu: expected {C,H,W}");
  if (p.gamma.dim(0) != y.dim(0))
    throw std::invalid_argument("rprelu: parameter length does not match channels");
  TensorT<T> out(y.shape());
  const std::int64_t c = y.dim(0), n = y.dim(1) * y.dim(2);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const T g = p.gamma[ch], z = p.zeta[ch], b = p.beta[ch];
    const T* src = y.data() + ch * n;
    T* dst = out.data() + ch * n;
    for (std::int64_t i = 0; i < n; ++i)
      dst[i] = src[i] > z ? src[i] - g + z : b * (src[i] - g) + z;
  }
  return out;
}

// Width-preserving residual block: RPReLU(DABC(a)) + a.
template <typename T>
TensorT<T> binary_conv_block(const TensorT<T>& a, const BinConvT<T>& layer, bool daca_on,
                             BlockTrace<T>* trace = nullptr) {
  if (layer.out_channels() != layer.in_channels())
    throw std::invalid_argument("binary_conv_block: requires Co == Ci, got " +
                                std::to_string(layer.in_channels()) + " -> " +
                                std::to_string(layer.out_channels()) +
                                " (use the fusion block for width changes)");
  if (layer.stride != 1)
    throw std::invalid_argument("binary_conv_block: stride must be 1 to keep the shortcut");
  TensorT<T> y = dabc_forward(a, layer, daca_on, trace ? &trace->dabc : nullptr);
  if (trace) trace->rpre_in = y;
  TensorT<T> out = rprelu(y, layer.act);
  const std::int64_t n = out.numel();
  T* d = out.data();
  const T* s = a.data();
  for (std::int64_t i = 0; i < n; ++i) d[i] += s[i];
  return out;
}

template <typename T>
TensorT<T> fp_conv2d(const TensorT<T>& a, const FpConvT<T>& conv) {
  if (a.rank() != 3) throw std::invalid_argument("fp_conv2d: expected {C,H,W}");
  if (conv.w.rank() != 4) throw std::invalid_argument("fp_conv2d: weights must be {Co,Ci,K,K}");
  if (conv.w.dim(1) != a.dim(0))
    throw std::invalid_argument("fp_conv2d: input has " + std::to_string(a.dim(0)) +
                                " channels, conv expects " + std::to_string(conv.w.dim(1)));
  const TensorT<T> ap = pad_spatial(a, conv.pad);
  const std::int64_t ci = ap.dim(0), hp = ap.dim(1), wp = ap.dim(2);
  const std::int64_t co = conv.w.dim(0), k = conv.w.dim(2);
  if (k > hp || k > wp) throw std::invalid_argument("fp_conv2d: kernel larger than padded input");
  const std::int64_t s = conv.stride;
  const std::int64_t ho = (hp - k) / s + 1, wo = (wp - k) / s + 1;
  TensorT<T> out({co, ho, wo});
  parallel_for(co, [&](std::int64_t ob, std::int64_t oe) {
    for (std::int64_t o = ob; o < oe; ++o) {
      T* dst = out.data() + o * ho * wo;
      for (std::int64_t i = 0; i < ho * wo; ++i) dst[i] = conv.b[o];
      for (std::int64_t c = 0; c < ci; ++c)
        for (std::int64_t ki = 0; ki < k; ++ki)
          for (std::int64_t kj = 0; kj < k; ++kj) {
            const T wv = conv.w(o, c, ki, kj);
            for (std::int64_t y = 0; y < ho; ++y) {
              const T* src = ap.data() + (c * hp + y * s + ki) * wp + kj;
              T* row = dst + y * wo;
              if (s == 1) {
                for (std::int64_t x = 0; x < wo; ++x) row[x] += wv * src[x];
              } else {
                for (std::int64_t x = 0; x < wo; ++x) row[x] += wv * src[x * s];
              }
            }
          }
    }
  });
  return out;
}

// Channel-changing block: RPReLU((binarized conv) * S) + 1x1 projection of
// the real input. No channel gate here; the projection stands in for it.
template <typename T>
TensorT<T> binary_fusion_block(const TensorT<T>& a, const FusionT<T>& f,
                               FusionTrace<T>* trace = nullptr) {
  if (f.proj.w.dim(2) != 1 || f.proj.w.dim(3) != 1 || f.proj.stride != 1)
    throw std::invalid_argument("binary_fusion_block: projection must be a stride-1 1x1 conv");
  if (f.proj.w.dim(0) != f.conv.out_channels() || f.proj.w.dim(1) != f.conv.in_channels())
    throw std::invalid_argument("binary_fusion_block: projection shape does not match conv");
  TensorT<T> y = dabc_forward(a, f.conv, /*daca_on=*/false, trace ? &trace->dabc : nullptr);
  if (trace) {
    trace->rpre_in = y;
    trace->input = a;
  }
  TensorT<T> out = rprelu(y, f.conv.act);
  const TensorT<T> p = fp_conv2d(a, f.proj);
  T* d = out.data();
  const T* s = p.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) d[i] += s[i];
  return out;
}

// 2x2 mean pooling, stride 2. Odd spatial dims are rejected.
template <typename T>
TensorT<T> avg_pool2(const TensorT<T>& a) {
  if (a.rank() != 3) throw std::invalid_argument("avg_pool2: expected {C,H,W}");
  const std::int64_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (h % 2 || w % 2)
    throw std::invalid_argument("avg_pool2: spatial dims must be even, got " + std::to_string(h) +
                                "x" + std::to_string(w));
  TensorT<T> out({c, h / 2, w / 2});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h / 2; ++y) {
      const T* r0 = a.data() + (ch * h + 2 * y) * w;
      const T* r1 = r0 + w;
      T* dst = out.data() + (ch * (h / 2) + y) * (w / 2);
      for (std::int64_t x = 0; x < w / 2; ++x)
        dst[x] = (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) / T(4);
    }
  return out;
}

struct Lerp2Plan {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> w1;  // weight of i1; i0 gets 1 - w1
};

// Half-pixel 2x sampling grid with edge clamping; shared by the forward
// interpolation and its adjoint.
inline Lerp2Plan lerp2_plan(std::int64_t n) {
  Lerp2Plan p;
  p.i0.resize(static_cast<std::size_t>(2 * n));
  p.i1.resize(static_cast<std::size_t>(2 * n));
  p.w1.resize(static_cast<std::size_t>(2 * n));
  for (std::int64_t i = 0; i < 2 * n; ++i) {
    const double src = (static_cast<double>(i) + 0.5) * 0.5 - 0.5;
    const double lo = std::floor(src);
    const double frac = src - lo;
    const std::int64_t a = std::clamp<std::int64_t>(static_cast<std::int64_t>(lo), 0, n - 1);
    const std::int64_t b = std::clamp<std::int64_t>(static_cast<std::int64_t>(lo) + 1, 0, n - 1);
    p.i0[static_cast<std::size_t>(i)] = a;
    p.i1[static_cast<std::size_t>(i)] = b;
    p.w1[static_cast<std::size_t>(i)] = frac;
  }
  return p;
}

// Bilinear 2x upsampling (half-pixel alignment, clamped edges). Exactly
// constant-preserving, so avg_pool2(bilinear_up2(x)) == x for constant x.
template <typename T>
TensorT<T> bilinear_up2(const TensorT<T>& a) {
  if (a.rank() != 3) throw std::invalid_argument("bilinear_up2: expected {C,H,W}");
  const std::int64_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  const Lerp2Plan py = lerp2_plan(h), px = lerp2_plan(w);
  TensorT<T> out({c, 2 * h, 2 * w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < 2 * h; ++y) {
      const T* r0 = a.data() + (ch * h + py.i0[static_cast<std::size_t>(y)]) * w;
      const T* r1 = a.data() + (ch * h + py.i1[static_cast<std::size_t>(y)]) * w;
      const T wy = static_cast<T>(py.w1[static_cast<std::size_t>(y)]);
      T* dst = out.data() + (ch * 2 * h + y) * 2 * w;
      for (std::int64_t x = 0; x < 2 * w; ++x) {
        const std::int64_t x0 = px.i0[static_cast<std::size_t>(x)];
        const std::int64_t x1 = px.i1[static_cast<std::size_t>(x)];
        const T wx = static_cast<T>(px.w1[static_cast<std::size_t>(x)]);
        const T top = r0[x0] + wx * (r0[x1] - r0[x0]);
        const T bot = r1[x0] + wx * (r1[x1] - r1[x0]);
        dst[x] = top + wy * (bot - top);
      }
    }
  return out;
}

}  // namespace brve
