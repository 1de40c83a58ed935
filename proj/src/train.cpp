#include "brve/train.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace brve {

namespace {

template <typename T>
void axpy(TensorT<T>& dst, const TensorT<T>& src) {
  if (!dst.same_shape(src)) throw std::logic_error("backward: adjoint shape mismatch");
  T* d = dst.data();
  const T* s = src.data();
  for (std::int64_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

// gradient passes through the binarization inside the clip window, inclusive
template <typename T>
T ste_mask(T x) {
  return std::abs(x) <= T(1) ? T(1) : T(0);
}

template <typename T>
TensorT<T> crop_interior(const TensorT<T>& padded, int pad, std::int64_t h, std::int64_t w) {
  const std::int64_t c = padded.dim(0), hp = padded.dim(1), wp = padded.dim(2);
  TensorT<T> out({c, h, w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      std::memcpy(out.data() + (ch * h + y) * w, padded.data() + (ch * hp + y + pad) * wp + pad,
                  sizeof(T) * static_cast<std::size_t>(w));
  return out;
}

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& t, std::int64_t c0, std::int64_t c1) {
  const std::int64_t h = t.dim(1), w = t.dim(2), n = h * w;
  TensorT<T> out({c1 - c0, h, w});
  std::memcpy(out.data(), t.data() + c0 * n,
              sizeof(T) * static_cast<std::size_t>((c1 - c0) * n));
  return out;
}

}  // namespace

// ---- losses ----

template <typename T>
double charbonnier(const std::vector<TensorT<T>>& pred, const std::vector<TensorT<T>>& target,
                   double eps) {
  if (pred.size() != target.size())
    throw std::invalid_argument("charbonnier: sequence lengths disagree");
  double sum = 0;
  std::int64_t n = 0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    if (!pred[f].same_shape(target[f]))
      throw std::invalid_argument("charbonnier: frame shapes disagree");
    const T* p = pred[f].data();
    const T* t = target[f].data();
    for (std::int64_t i = 0; i < pred[f].numel(); ++i) {
      const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
      sum += std::sqrt(d * d + eps * eps);
    }
    n += pred[f].numel();
  }
  return sum / static_cast<double>(n);
}

template <typename T>
std::vector<TensorT<T>> charbonnier_backward(const std::vector<TensorT<T>>& pred,
                                             const std::vector<TensorT<T>>& target, double eps) {
  std::int64_t n = 0;
  for (const auto& p : pred) n += p.numel();
  std::vector<TensorT<T>> g;
  g.reserve(pred.size());
  for (std::size_t f = 0; f < pred.size(); ++f) {
    TensorT<T> gf(pred[f].shape());
    const T* p = pred[f].data();
    const T* t = target[f].data();
    for (std::int64_t i = 0; i < gf.numel(); ++i) {
      const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
      gf[i] = static_cast<T>(d / (std::sqrt(d * d + eps * eps) * static_cast<double>(n)));
    }
    g.push_back(std::move(gf));
  }
  return g;
}

// ---- elementary backward passes ----

template <typename T>
TensorT<T> rprelu_backward(const TensorT<T>& g, const TensorT<T>& y, const RPReluT<T>& p,
                           RPReluT<T>& gp) {
  TensorT<T> dy(y.shape());
  const std::int64_t c = y.dim(0), n = y.dim(1) * y.dim(2);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const T z = p.zeta[ch], b = p.beta[ch], gm = p.gamma[ch];
    const T* gs = g.data() + ch * n;
    const T* ys = y.data() + ch * n;
    T* ds = dy.data() + ch * n;
    T dg = 0, dz = 0, db = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      if (ys[i] > z) {
        ds[i] = gs[i];
        dg -= gs[i];
        dz += gs[i];
      } else {
        ds[i] = gs[i] * b;
        dg -= gs[i] * b;
        dz += gs[i];
        db += gs[i] * (ys[i] - gm);
      }
    }
    gp.gamma[ch] += dg;
    gp.zeta[ch] += dz;
    gp.beta[ch] += db;
  }
  return dy;
}

template <typename T>
TensorT<T> fp_conv2d_backward(const TensorT<T>& g, const TensorT<T>& input, const FpConvT<T>& conv,
                              FpConvT<T>& gconv) {
  const TensorT<T> ap = pad_spatial(input, conv.pad);
  const std::int64_t ci = ap.dim(0), hp = ap.dim(1), wp = ap.dim(2);
  const std::int64_t co = conv.w.dim(0), k = conv.w.dim(2), s = conv.stride;
  const std::int64_t ho = g.dim(1), wo = g.dim(2);
  TensorT<T> dap(ap.shape(), T(0));
  for (std::int64_t o = 0; o < co; ++o) {
    const T* go = g.data() + o * ho * wo;
    T db = 0;
    for (std::int64_t i = 0; i < ho * wo; ++i) db += go[i];
    gconv.b[o] += db;
    for (std::int64_t c = 0; c < ci; ++c)
      for (std::int64_t ki = 0; ki < k; ++ki)
        for (std::int64_t kj = 0; kj < k; ++kj) {
          const T wv = conv.w(o, c, ki, kj);
          // four partial sums break the serial reduction dependency
          T dw0 = 0, dw1 = 0, dw2 = 0, dw3 = 0;
          for (std::int64_t y = 0; y < ho; ++y) {
            const T* __restrict src = ap.data() + (c * hp + y * s + ki) * wp + kj;
            T* __restrict drow = dap.data() + (c * hp + y * s + ki) * wp + kj;
            const T* __restrict grow = go + y * wo;
            if (s == 1) {
              std::int64_t x = 0;
              for (; x + 4 <= wo; x += 4) {
                dw0 += grow[x] * src[x];
                dw1 += grow[x + 1] * src[x + 1];
                dw2 += grow[x + 2] * src[x + 2];
                dw3 += grow[x + 3] * src[x + 3];
                drow[x] += grow[x] * wv;
                drow[x + 1] += grow[x + 1] * wv;
                drow[x + 2] += grow[x + 2] * wv;
                drow[x + 3] += grow[x + 3] * wv;
              }
              for (; x < wo; ++x) {
                dw0 += grow[x] * src[x];
                drow[x] += grow[x] * wv;
              }
            } else {
              for (std::int64_t x = 0; x < wo; ++x) {
                dw0 += grow[x] * src[x * s];
                drow[x * s] += grow[x] * wv;
              }
            }
          }
          gconv.w(o, c, ki, kj) += ((dw0 + dw1) + (dw2 + dw3));
        }
  }
  if (conv.pad == 0) return dap;
  return crop_interior(dap, conv.pad, input.dim(1), input.dim(2));
}

template <typename T>
TensorT<T> dabc_backward(const TensorT<T>& g, const DabcTrace<T>& tr, const BinConvT<T>& layer,
                         BinConvT<T>& glayer) {
  const std::int64_t ci = tr.in_shape[0], h = tr.in_shape[1], w = tr.in_shape[2];
  const std::int64_t co = g.dim(0), ho = g.dim(1), wo = g.dim(2);
  const std::int64_t k = layer.ksize(), s = layer.stride;
  const int pad = tr.pad;
  const std::int64_t hp = tr.aprime_pad.dim(1), wp = tr.aprime_pad.dim(2);

  // adjoint of the integer conv output (scale S is held constant)
  TensorT<T> gint(g.shape());
  for (std::int64_t o = 0; o < co; ++o) {
    const T f = layer.scale[static_cast<std::size_t>(o)] *
                (tr.daca_on ? tr.daca_out[static_cast<std::size_t>(o)] : T(1));
    const T* gs = g.data() + o * ho * wo;
    T* d = gint.data() + o * ho * wo;
    for (std::int64_t i = 0; i < ho * wo; ++i) d[i] = gs[i] * f;
  }

  TensorT<T> daprime_pad(tr.aprime_pad.shape(), T(0));

  if (tr.daca_on) {
    // gate path: dL/dgate -> logistic -> channel conv -> statistics
    const std::int64_t dk = layer.daca.kernel.dim(1), half = dk / 2;
    std::vector<T> dz(static_cast<std::size_t>(co));
    for (std::int64_t o = 0; o < co; ++o) {
      const T* gs = g.data() + o * ho * wo;
      const T* cs = tr.conv_int.data() + o * ho * wo;
      T dd = 0;
      for (std::int64_t i = 0; i < ho * wo; ++i) dd += gs[i] * cs[i];
      dd *= layer.scale[static_cast<std::size_t>(o)];
      const T sig = tr.daca_out[static_cast<std::size_t>(o)];
      dz[static_cast<std::size_t>(o)] = dd * sig * (T(1) - sig);
    }
    TensorT<T> dstat({3, ci}, T(0));
    for (std::int64_t o = 0; o < co; ++o) {
      glayer.daca.bias[0] += dz[static_cast<std::size_t>(o)];
      for (std::int64_t st = 0; st < 3; ++st)
        for (std::int64_t j = 0; j < dk; ++j) {
          const std::int64_t q = o + j - half;
          if (q < 0 || q >= ci) continue;
          glayer.daca.kernel(st, j) += dz[static_cast<std::size_t>(o)] * tr.stat_x(st, q);
          dstat(st, q) += dz[static_cast<std::size_t>(o)] * layer.daca.kernel(st, j);
        }
    }
    // statistics adjoints land on the unpadded shifted activation
    const T inv_n = T(1) / static_cast<T>(h * w);
    for (std::int64_t ch = 0; ch < ci; ++ch) {
      const T mu = tr.stat_x(1, ch), sd = tr.stat_x(2, ch);
      const T da = dstat(0, ch) * inv_n, dm = dstat(1, ch) * inv_n;
      const T dsd = sd > T(0) ? dstat(2, ch) * inv_n / sd : T(0);
      for (std::int64_t y = 0; y < h; ++y) {
        const T* v = tr.aprime_pad.data() + (ch * hp + y + pad) * wp + pad;
        T* d = daprime_pad.data() + (ch * hp + y + pad) * wp + pad;
        for (std::int64_t x = 0; x < w; ++x) {
          const T sgn = v[x] > T(0) ? T(1) : (v[x] < T(0) ? T(-1) : T(0));
          d[x] += da * sgn + dm + dsd * (v[x] - mu);
        }
      }
    }
  }

  // binary conv path: dense +-1 operands reconstructed from the trace
  TensorT<T> wb(layer.latent.shape());
  for (std::int64_t i = 0; i < wb.numel(); ++i) wb[i] = layer.latent[i] > T(0) ? T(1) : T(-1);
  TensorT<T> ab(tr.aprime_pad.shape());
  for (std::int64_t i = 0; i < ab.numel(); ++i)
    ab[i] = tr.aprime_pad[i] > T(0) ? T(1) : T(-1);

  TensorT<T> dconv(tr.aprime_pad.shape(), T(0));
  for (std::int64_t o = 0; o < co; ++o) {
    const T* go = gint.data() + o * ho * wo;
    for (std::int64_t c = 0; c < ci; ++c)
      for (std::int64_t ki = 0; ki < k; ++ki)
        for (std::int64_t kj = 0; kj < k; ++kj) {
          const T wv = wb(o, c, ki, kj);
          // four partial sums break the serial reduction dependency
          T dw0 = 0, dw1 = 0, dw2 = 0, dw3 = 0;
          for (std::int64_t y = 0; y < ho; ++y) {
            const T* __restrict arow = ab.data() + (c * hp + y * s + ki) * wp + kj;
            T* __restrict drow = dconv.data() + (c * hp + y * s + ki) * wp + kj;
            const T* __restrict grow = go + y * wo;
            if (s == 1) {
              std::int64_t x = 0;
              for (; x + 4 <= wo; x += 4) {
                dw0 += grow[x] * arow[x];
                dw1 += grow[x + 1] * arow[x + 1];
                dw2 += grow[x + 2] * arow[x + 2];
                dw3 += grow[x + 3] * arow[x + 3];
                drow[x] += grow[x] * wv;
                drow[x + 1] += grow[x + 1] * wv;
                drow[x + 2] += grow[x + 2] * wv;
                drow[x + 3] += grow[x + 3] * wv;
              }
              for (; x < wo; ++x) {
                dw0 += grow[x] * arow[x];
                drow[x] += grow[x] * wv;
              }
            } else {
              for (std::int64_t x = 0; x < wo; ++x) {
                dw0 += grow[x] * arow[x * s];
                drow[x * s] += grow[x] * wv;
              }
            }
          }
          glayer.latent(o, c, ki, kj) +=
              ((dw0 + dw1) + (dw2 + dw3)) * ste_mask(layer.latent(o, c, ki, kj));
        }
  }
  // activation binarization passes through only inside the clip window
  for (std::int64_t i = 0; i < dconv.numel(); ++i)
    daprime_pad[i] += dconv[i] * ste_mask(tr.aprime_pad[i]);

  // the threshold shifts the whole padded extent
  const std::int64_t np = hp * wp;
  for (std::int64_t ch = 0; ch < ci; ++ch) {
    const T* d = daprime_pad.data() + ch * np;
    T da = 0;
    for (std::int64_t i = 0; i < np; ++i) da += d[i];
    glayer.alpha[ch] -= da;
  }
  if (pad == 0) return daprime_pad;
  return crop_interior(daprime_pad, pad, h, w);
}

template <typename T>
TensorT<T> block_backward(const TensorT<T>& g, const BlockTrace<T>& tr, const BinConvT<T>& layer,
                          BinConvT<T>& glayer) {
  const TensorT<T> dy = rprelu_backward(g, tr.rpre_in, layer.act, glayer.act);
  TensorT<T> din = dabc_backward(dy, tr.dabc, layer, glayer);
  axpy(din, g);  // shortcut
  return din;
}

template <typename T>
TensorT<T> fusion_backward(const TensorT<T>& g, const FusionTrace<T>& tr, const FusionT<T>& f,
                           FusionT<T>& gf) {
  const TensorT<T> dy = rprelu_backward(g, tr.rpre_in, f.conv.act, gf.conv.act);
  TensorT<T> din = dabc_backward(dy, tr.dabc, f.conv, gf.conv);
  axpy(din, fp_conv2d_backward(g, tr.input, f.proj, gf.proj));
  return din;
}

template <typename T>
TensorT<T> avg_pool2_backward(const TensorT<T>& g) {
  const std::int64_t c = g.dim(0), h = g.dim(1), w = g.dim(2);
  TensorT<T> din({c, 2 * h, 2 * w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y) {
      const T* gs = g.data() + (ch * h + y) * w;
      T* r0 = din.data() + (ch * 2 * h + 2 * y) * 2 * w;
      T* r1 = r0 + 2 * w;
      for (std::int64_t x = 0; x < w; ++x) {
        const T v = gs[x] / T(4);
        r0[2 * x] = v;
        r0[2 * x + 1] = v;
        r1[2 * x] = v;
        r1[2 * x + 1] = v;
      }
    }
  return din;
}

template <typename T>
TensorT<T> bilinear_up2_backward(const TensorT<T>& g) {
  const std::int64_t c = g.dim(0), ho = g.dim(1), wo = g.dim(2);
  if (ho % 2 || wo % 2) throw std::invalid_argument("bilinear_up2_backward: odd output dims");
  const std::int64_t h = ho / 2, w = wo / 2;
  const Lerp2Plan py = lerp2_plan(h), px = lerp2_plan(w);
  TensorT<T> din({c, h, w}, T(0));
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < ho; ++y) {
      const T wy = static_cast<T>(py.w1[static_cast<std::size_t>(y)]);
      T* r0 = din.data() + (ch * h + py.i0[static_cast<std::size_t>(y)]) * w;
      T* r1 = din.data() + (ch * h + py.i1[static_cast<std::size_t>(y)]) * w;
      const T* gs = g.data() + (ch * ho + y) * wo;
      for (std::int64_t x = 0; x < wo; ++x) {
        const std::int64_t x0 = px.i0[static_cast<std::size_t>(x)];
        const std::int64_t x1 = px.i1[static_cast<std::size_t>(x)];
        const T wx = static_cast<T>(px.w1[static_cast<std::size_t>(x)]);
        const T gv = gs[x];
        r0[x0] += (T(1) - wy) * (T(1) - wx) * gv;
        r0[x1] += (T(1) - wy) * wx * gv;
        r1[x0] += wy * (T(1) - wx) * gv;
        r1[x1] += wy * wx * gv;
      }
    }
  return din;
}

template <typename T>
std::array<TensorT<T>, 3> st_shift_window_adjoint(const std::array<TensorT<T>, 3>& gout,
                                                  ShiftDir dir, const ShiftKernel& kernel) {
  const std::int64_t c32 = gout[0].dim(0);
  if (c32 % 3) throw std::invalid_argument("shift adjoint: channels must be 3C/2");
  const std::int64_t half = c32 / 3;
  std::array<TensorT<T>, 3> dcycled, dkeep;
  for (int i = 0; i < 3; ++i) {
    const auto& go = gout[static_cast<std::size_t>(i)];
    dkeep[static_cast<std::size_t>(i)] = slice_channels(go, 0, half);
    TensorT<T> dc = spatial_shift_adjoint(slice_channels(go, half, 2 * half), kernel);
    axpy(dc, slice_channels(go, 2 * half, 3 * half));
    dcycled[static_cast<std::size_t>(i)] = std::move(dc);
  }
  // adjoint of a cyclic permutation is the opposite cycle
  const ShiftDir inv = dir == ShiftDir::forward ? ShiftDir::backward : ShiftDir::forward;
  const std::array<TensorT<T>, 3> dsh = cyclic_temporal_shift(dcycled, inv);
  std::array<TensorT<T>, 3> din;
  for (int i = 0; i < 3; ++i)
    din[static_cast<std::size_t>(i)] = concat_channels<T>(
        {&dkeep[static_cast<std::size_t>(i)], &dsh[static_cast<std::size_t>(i)]});
  return din;
}

template <typename T>
TensorT<T> unet_backward(const TensorT<T>& g, const UnetT<T>& u, const UnetTrace<T>& tr,
                         UnetT<T>& gu) {
  const int levels = u.levels();
  const int n = static_cast<int>(u.groups.size());
  std::vector<TensorT<T>> dskip(static_cast<std::size_t>(levels));
  TensorT<T> dcur = g;
  for (int gi = n - 1; gi >= 0; --gi) {
    if (gi < levels) {
      TensorT<T> d = avg_pool2_backward(dcur);
      axpy(d, dskip[static_cast<std::size_t>(gi)]);
      dcur = std::move(d);
    }
    const auto& blocks = u.groups[static_cast<std::size_t>(gi)];
    auto& gblocks = gu.groups[static_cast<std::size_t>(gi)];
    for (int b = static_cast<int>(blocks.size()) - 1; b >= 0; --b)
      dcur = block_backward(dcur, tr.groups[static_cast<std::size_t>(gi)][static_cast<std::size_t>(b)],
                            blocks[static_cast<std::size_t>(b)], gblocks[static_cast<std::size_t>(b)]);
    if (gi > levels) {
      dskip[static_cast<std::size_t>(2 * levels - gi)] = dcur;
      dcur = bilinear_up2_backward(dcur);
    }
  }
  return dcur;
}

template <typename T>
std::array<TensorT<T>, 3> shift_unet_backward(const std::array<TensorT<T>, 3>& g,
                                              const ShiftUnetT<T>& u, const ShiftUnetTrace<T>& tr,
                                              ShiftUnetT<T>& gu) {
  const int levels = u.levels();
  const int n = static_cast<int>(u.groups.size());
  std::vector<std::array<TensorT<T>, 3>> dskip(static_cast<std::size_t>(levels));
  std::array<TensorT<T>, 3> dcur = g;
  for (int gi = n - 1; gi >= 0; --gi) {
    if (gi < levels) {
      for (int s = 0; s < 3; ++s) {
        TensorT<T> d = avg_pool2_backward(dcur[static_cast<std::size_t>(s)]);
        axpy(d, dskip[static_cast<std::size_t>(gi)][static_cast<std::size_t>(s)]);
        dcur[static_cast<std::size_t>(s)] = std::move(d);
      }
    }
    const auto& grp = u.groups[static_cast<std::size_t>(gi)];
    auto& ggrp = gu.groups[static_cast<std::size_t>(gi)];
    const auto& gt = tr.groups[static_cast<std::size_t>(gi)];
    std::array<TensorT<T>, 3> dshifted;
    for (int s = 0; s < 3; ++s) {
      TensorT<T> dx = dcur[static_cast<std::size_t>(s)];
      for (int b = static_cast<int>(grp.blocks.size()) - 1; b >= 0; --b)
        dx = block_backward(dx, gt.blocks[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)],
                            grp.blocks[static_cast<std::size_t>(b)],
                            ggrp.blocks[static_cast<std::size_t>(b)]);
      dshifted[static_cast<std::size_t>(s)] =
          fusion_backward(dx, gt.fuse[static_cast<std::size_t>(s)], grp.fuse, ggrp.fuse);
    }
    const ShiftDir dir = gi % 2 == 0 ? ShiftDir::forward : ShiftDir::backward;
    dcur = st_shift_window_adjoint(dshifted, dir);
    if (gi > levels) {
      dskip[static_cast<std::size_t>(2 * levels - gi)] = dcur;
      for (auto& d : dcur) d = bilinear_up2_backward(d);
    }
  }
  return dcur;
}

template <typename T>
void brve_backward(const std::vector<TensorT<T>>& gout, const BrveModelT<T>& m,
                   const BrveTrace<T>& tr, BrveModelT<T>& grads) {
  const SchedulePlan& plan = tr.plan;
  const int t = plan.t;
  if (static_cast<int>(gout.size()) != t)
    throw std::invalid_argument("backward: output adjoint count does not match the plan");
  const std::int64_t c = m.cfg.base_channels;

  std::vector<TensorT<T>> df1(static_cast<std::size_t>(t));
  std::vector<std::array<TensorT<T>, 3>> dwin(plan.windows.size());
  const auto ensure = [&](TensorT<T>& slot, const std::vector<std::int64_t>& shape) -> TensorT<T>& {
    if (slot.empty()) slot = TensorT<T>(shape, T(0));
    return slot;
  };

  // stage 3 first: every emit routes gradient into its frame and window slot
  std::vector<std::int64_t> fshape;
  for (auto it = tr.outs.rbegin(); it != tr.outs.rend(); ++it) {
    const OutTrace<T>& ot = *it;
    const TensorT<T> dlast_in =
        fp_conv2d_backward(gout[static_cast<std::size_t>(ot.frame)], ot.last_in, m.last, grads.last);
    const TensorT<T> du3 = unet_backward(dlast_in, m.u3, ot.u3, grads.u3);
    const TensorT<T> dcat = fusion_backward(du3, ot.fuse3, m.fuse3, grads.fuse3);
    fshape = {c, dcat.dim(1), dcat.dim(2)};
    axpy(ensure(df1[static_cast<std::size_t>(ot.frame)], fshape), slice_channels(dcat, 0, c));
    axpy(ensure(dwin[static_cast<std::size_t>(ot.win)][static_cast<std::size_t>(ot.slot)], fshape),
         slice_channels(dcat, c, 2 * c));
  }

  // windows in reverse schedule order; consumers have already deposited
  for (int w = static_cast<int>(plan.windows.size()) - 1; w >= 0; --w) {
    std::array<TensorT<T>, 3> go;
    for (int s = 0; s < 3; ++s)
      go[static_cast<std::size_t>(s)] =
          ensure(dwin[static_cast<std::size_t>(w)][static_cast<std::size_t>(s)], fshape);
    const std::array<TensorT<T>, 3> dslots =
        shift_unet_backward(go, m.u2, tr.windows[static_cast<std::size_t>(w)].u2, grads.u2);
    const WindowPlan& wp = plan.windows[static_cast<std::size_t>(w)];
    for (int s = 0; s < 3; ++s) {
      const SlotSrc& src = wp.slots[static_cast<std::size_t>(s)];
      if (src.kind == SlotSrc::Kind::stage1)
        axpy(ensure(df1[static_cast<std::size_t>(src.frame)], fshape),
             dslots[static_cast<std::size_t>(s)]);
      else if (src.kind == SlotSrc::Kind::win_out)
        axpy(ensure(dwin[static_cast<std::size_t>(src.win)][static_cast<std::size_t>(src.slot)],
                    fshape),
             dslots[static_cast<std::size_t>(s)]);
    }
  }

  // stage 1 last
  for (int f = t - 1; f >= 0; --f) {
    const FrameTrace<T>& ft = tr.frames[static_cast<std::size_t>(f)];
    const TensorT<T> dstem =
        unet_backward(ensure(df1[static_cast<std::size_t>(f)], fshape), m.u1, ft.u1, grads.u1);
    (void)fp_conv2d_backward(dstem, ft.stem_in, m.stem, grads.stem);
  }
}

// ---- optimizer ----

void AdamState::step(BrveModelT<float>& params, BrveModelT<float>& grads, double lr,
                     const std::function<bool(const std::string&)>& trainable) {
  std::vector<std::pair<std::string, TensorT<float>*>> ps, gs;
  visit_params<float>(params, [&](const std::string& n, TensorT<float>& t) {
    ps.emplace_back(n, &t);
  });
  visit_params<float>(grads, [&](const std::string& n, TensorT<float>& t) {
    gs.emplace_back(n, &t);
  });
  if (ps.size() != gs.size())
    throw std::logic_error("adam: parameter and gradient walks disagree");
  if (m_.empty()) {
    m_.resize(ps.size());
    v_.resize(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(ps[i].second->numel()), 0.0f);
      v_[i].assign(static_cast<std::size_t>(ps[i].second->numel()), 0.0f);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].first != gs[i].first) throw std::logic_error("adam: walk order mismatch");
    if (trainable && !trainable(ps[i].first)) continue;
    TensorT<float>& p = *ps[i].second;
    const TensorT<float>& g = *gs[i].second;
    if (static_cast<std::size_t>(p.numel()) != m_[i].size())
      throw std::logic_error("adam: state size mismatch for " + ps[i].first);
    float* mp = m_[i].data();
    float* vp = v_[i].data();
    for (std::int64_t j = 0; j < p.numel(); ++j) {
      const double gj = g[j];
      mp[j] = static_cast<float>(cfg_.beta1 * mp[j] + (1.0 - cfg_.beta1) * gj);
      vp[j] = static_cast<float>(cfg_.beta2 * vp[j] + (1.0 - cfg_.beta2) * gj * gj);
      const double mhat = mp[j] / bc1;
      const double vhat = vp[j] / bc2;
      p[j] = static_cast<float>(p[j] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

std::vector<StepLog> train_loop(BrveModelT<float>& m, const BatchFn& batch,
                                const TrainOptions& opt) {
  if (opt.steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  AdamState adam;
  std::vector<StepLog> log;
  log.reserve(static_cast<std::size_t>(opt.steps));
  std::ofstream csv;
  if (!opt.log_csv.empty()) {
    csv.open(opt.log_csv, std::ios::trunc);
    if (!csv) throw std::runtime_error("train: cannot open log '" + opt.log_csv + "'");
    csv << "step,lr,loss\n";
  }
  const auto trainable = [&](const std::string& name) {
    return opt.train_daca || name.find("daca") == std::string::npos;
  };
  std::vector<DenseTensor> noisy, clean;
  for (int step = 0; step < opt.steps; ++step) {
    noisy.clear();
    clean.clear();
    batch(step, noisy, clean);
    BrveTrace<float> trace;
    const std::vector<DenseTensor> pred = brve_forward(m, noisy, opt.stride, &trace);
    const double loss = charbonnier(pred, clean, opt.charbonnier_eps);
    if (!std::isfinite(loss))
      throw std::runtime_error("train: loss diverged at step " + std::to_string(step) +
                               " (last finite loss " +
                               std::to_string(log.empty() ? 0.0 : log.back().loss) + ")");
    BrveModelT<float> grads = zeros_like(m);
    brve_backward(charbonnier_backward(pred, clean, opt.charbonnier_eps), m, trace, grads);
    const double lr = cosine_lr(opt.base_lr, step, opt.steps);
    adam.step(m, grads, lr, trainable);
    refresh_derived(m);
    log.push_back({step, lr, loss});
    if (csv.is_open()) csv << step << "," << lr << "," << loss << "\n";
  }
  return log;
}

// ---- explicit instantiations ----

#define BRVE_INSTANTIATE_TRAIN(T)                                                               \
  template double charbonnier<T>(const std::vector<TensorT<T>>&, const std::vector<TensorT<T>>&, \
                                 double);                                                        \
  template std::vector<TensorT<T>> charbonnier_backward<T>(const std::vector<TensorT<T>>&,       \
                                                           const std::vector<TensorT<T>>&,       \
                                                           double);                              \
  template TensorT<T> rprelu_backward<T>(const TensorT<T>&, const TensorT<T>&, const RPReluT<T>&, \
                                         RPReluT<T>&);                                           \
  template TensorT<T> fp_conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&,                \
                                            const FpConvT<T>&, FpConvT<T>&);                     \
  template TensorT<T> dabc_backward<T>(const TensorT<T>&, const DabcTrace<T>&,                   \
                                       const BinConvT<T>&, BinConvT<T>&);                        \
  template TensorT<T> block_backward<T>(const TensorT<T>&, const BlockTrace<T>&,                 \
                                        const BinConvT<T>&, BinConvT<T>&);                       \
  template TensorT<T> fusion_backward<T>(const TensorT<T>&, const FusionTrace<T>&,               \
                                         const FusionT<T>&, FusionT<T>&);                        \
  template TensorT<T> avg_pool2_backward<T>(const TensorT<T>&);                                  \
  template TensorT<T> bilinear_up2_backward<T>(const TensorT<T>&);                               \
  template std::array<TensorT<T>, 3> st_shift_window_adjoint<T>(                                 \
      const std::array<TensorT<T>, 3>&, ShiftDir, const ShiftKernel&);                           \
  template TensorT<T> unet_backward<T>(const TensorT<T>&, const UnetT<T>&, const UnetTrace<T>&,  \
                                       UnetT<T>&);                                               \
  template std::array<TensorT<T>, 3> shift_unet_backward<T>(                                     \
      const std::array<TensorT<T>, 3>&, const ShiftUnetT<T>&, const ShiftUnetTrace<T>&,          \
      ShiftUnetT<T>&);                                                                           \
  template void brve_backward<T>(const std::vector<TensorT<T>>&, const BrveModelT<T>&,           \
                                 const BrveTrace<T>&, BrveModelT<T>&);

BRVE_INSTANTIATE_TRAIN(float)
BRVE_INSTANTIATE_TRAIN(double)

#undef BRVE_INSTANTIATE_TRAIN

}  // namespace brve
