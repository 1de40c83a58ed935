#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "brve/rng.hpp"
#include "brve/train.hpp"

// Finite differences can certify a gradient only along paths that are smooth
// in the probed parameter. Gradient paths that cross a binarization carry the
// straight-through surrogate instead of the (zero) piecewise derivative, so
// each parameter group is checked through the smooth subgraph it feeds:
// activation and gate parameters against their own layer's output, real
// convolutions against theirs, and the output-side parameters through the
// entire recurrent pipeline. The surrogate paths (latent weights and the
// binarization threshold) are verified against a naive re-derivation of the
// documented surrogate formulas instead of differences.

namespace brve {

namespace {

using std::int64_t;

TensorT<double> rand_tensor(CounterRng& rng, const std::vector<int64_t>& shape, double sd) {
  TensorT<double> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, sd);
  return t;
}

double central(double& theta, const std::function<double()>& loss) {
  const double h = 1e-6 * std::max(1.0, std::fabs(theta));
  const double orig = theta;
  theta = orig + h;
  const double lp = loss();
  theta = orig - h;
  const double lm = loss();
  theta = orig;
  return (lp - lm) / (2.0 * h);
}

struct Recorder {
  GradCheckReport& rep;

  void record(const std::string& name, int64_t idx, double analytic, double numeric) {
    const double rel = std::fabs(numeric - analytic) /
                       std::max({std::fabs(numeric), std::fabs(analytic), 1e-6});
    ++rep.checked;
    rep.max_rel = std::max(rep.max_rel, rel);
    rep.worst.push_back({name, idx, analytic, numeric, rel});
    std::sort(rep.worst.begin(), rep.worst.end(),
              [](const GradCheckIssue& a, const GradCheckIssue& b) { return a.rel > b.rel; });
    if (rep.worst.size() > 8) rep.worst.resize(8);
  }

  void fd(const std::string& name, int64_t idx, double& theta, double analytic,
          const std::function<double()>& loss) {
    record(name, idx, analytic, central(theta, loss));
  }
};

BinConvT<double> zero_grads_of(const BinConvT<double>& l) {
  BinConvT<double> g;
  g.latent = TensorT<double>(l.latent.shape(), 0.0);
  g.alpha = TensorT<double>(l.alpha.shape(), 0.0);
  g.act.gamma = TensorT<double>(l.act.gamma.shape(), 0.0);
  g.act.zeta = TensorT<double>(l.act.zeta.shape(), 0.0);
  g.act.beta = TensorT<double>(l.act.beta.shape(), 0.0);
  g.has_daca = l.has_daca;
  g.daca.kernel = TensorT<double>(l.daca.kernel.shape(), 0.0);
  g.daca.bias = TensorT<double>(l.daca.bias.shape(), 0.0);
  g.stride = l.stride;
  return g;
}

double weighted_sum(const TensorT<double>& r, const TensorT<double>& v) {
  double acc = 0;
  for (int64_t i = 0; i < r.numel(); ++i) acc += r[i] * v[i];
  return acc;
}

ModelConfig probe_config() {
  ModelConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 8;
  cfg.blocks_per_level = 1;
  cfg.daca_k = 3;
  cfg.daca_enabled = true;
  return cfg;
}

// ---- group: activation parameters on their own layer ----

void check_rprelu(Recorder& rec, const RPReluT<double>& params, const std::string& name,
                  std::uint64_t seed) {
  RPReluT<double> p = params;
  const int64_t c = p.gamma.dim(0);
  CounterRng rng(seed, 11);
  TensorT<double> y({c, 6, 6});
  const int64_t n = 36;
  // keep every input at least 0.12 from its channel's branch point
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < n; ++i) {
      const double u = rng.uniform(-0.9, 0.9);
      y[ch * n + i] = p.zeta[ch] + (u >= 0 ? u + 0.12 : u - 0.12);
    }
  const TensorT<double> r = rand_tensor(rng, {c, 6, 6}, 1.0);

  RPReluT<double> gp;
  gp.gamma = TensorT<double>({c}, 0.0);
  gp.zeta = TensorT<double>({c}, 0.0);
  gp.beta = TensorT<double>({c}, 0.0);
  (void)rprelu_backward(r, y, p, gp);

  const auto loss = [&]() { return weighted_sum(r, rprelu(y, p)); };
  for (int64_t ch = 0; ch < c; ++ch) {
    rec.fd(name + ".gamma", ch, p.gamma[ch], gp.gamma[ch], loss);
    rec.fd(name + ".zeta", ch, p.zeta[ch], gp.zeta[ch], loss);
    rec.fd(name + ".beta", ch, p.beta[ch], gp.beta[ch], loss);
  }
}

// ---- group: gate parameters through one gated layer ----

void check_daca(Recorder& rec, const BinConvT<double>& layer, const std::string& name,
                std::uint64_t seed) {
  BinConvT<double> l = layer;
  CounterRng rng(seed, 12);
  // generic gate operating point instead of the zero-initialized one
  for (int64_t i = 0; i < l.daca.kernel.numel(); ++i) l.daca.kernel[i] = rng.normal(0.0, 0.3);
  l.daca.bias[0] = rng.normal(0.0, 0.2);
  const TensorT<double> a =
      rand_tensor(rng, {l.in_channels(), 6, 6}, 0.9);
  const TensorT<double> r = rand_tensor(rng, {l.out_channels(), 6, 6}, 1.0);

  DabcTrace<double> tr;
  (void)dabc_forward(a, l, true, &tr);
  BinConvT<double> gl = zero_grads_of(l);
  (void)dabc_backward(r, tr, l, gl);

  const auto loss = [&]() { return weighted_sum(r, dabc_forward(a, l, true)); };
  for (int64_t i = 0; i < l.daca.kernel.numel(); ++i)
    rec.fd(name + ".daca_k", i, l.daca.kernel[i], gl.daca.kernel[i], loss);
  rec.fd(name + ".daca_b", 0, l.daca.bias[0], gl.daca.bias[0], loss);
}

// ---- group: real convolutions ----

void check_fp_conv(Recorder& rec, const FpConvT<double>& conv, const std::string& name,
                   std::uint64_t seed) {
  FpConvT<double> c = conv;
  CounterRng rng(seed, 13);
  const int64_t ci = c.w.dim(1);
  const TensorT<double> a = rand_tensor(rng, {ci, 8, 8}, 0.8);
  const TensorT<double> out0 = fp_conv2d(a, c);
  const TensorT<double> r = rand_tensor(rng, out0.shape(), 1.0);

  FpConvT<double> gc;
  gc.w = TensorT<double>(c.w.shape(), 0.0);
  gc.b = TensorT<double>(c.b.shape(), 0.0);
  (void)fp_conv2d_backward(r, a, c, gc);

  const auto loss = [&]() { return weighted_sum(r, fp_conv2d(a, c)); };
  const int64_t nw = c.w.numel();
  for (const int64_t i : {int64_t{0}, nw / 4, nw / 2, (3 * nw) / 4, nw - 1})
    rec.fd(name + ".w", i, c.w[i], gc.w[i], loss);
  for (int64_t o = 0; o < c.b.numel(); ++o) rec.fd(name + ".b", o, c.b[o], gc.b[o], loss);
}

// ---- group: output-side parameters through the full pipeline ----

void check_pipeline_tail(Recorder& rec, GradCheckReport& rep, std::uint64_t seed,
                         double req_margin) {
  const ModelConfig cfg = probe_config();
  BrveModelT<double> m;
  std::vector<TensorT<double>> frames, target;
  bool found = false;
  for (std::uint64_t attempt = 0; attempt < 50 && !found; ++attempt) {
    m = init_model<double>(cfg, substream(seed, 14, attempt));
    auto& blk = m.u3.groups.back().back();
    CounterRng rng(seed, substream(seed, 15, attempt));
    for (int64_t ch = 0; ch < blk.act.zeta.numel(); ++ch) {
      blk.act.gamma[ch] = rng.normal(0.0, 0.1);
      blk.act.beta[ch] = 0.25 + rng.normal(0.0, 0.2);
    }
    for (int64_t i = 0; i < blk.daca.kernel.numel(); ++i)
      blk.daca.kernel[i] = rng.normal(0.0, 0.2);
    blk.daca.bias[0] = rng.normal(0.0, 0.2);
    // the attenuated initialization leaves this block's branch nearly silent,
    // which starves the gate gradients below finite-difference resolution;
    // probe at a live operating point instead
    for (int64_t i = 0; i < blk.latent.numel(); ++i) blk.latent[i] *= 25.0;
    update_derived(blk);
    // the reconstruction conv initializes near zero for the same reason
    for (int64_t i = 0; i < m.last.w.numel(); ++i) m.last.w[i] = rng.normal(0.0, 0.05);
    for (int64_t i = 0; i < m.last.b.numel(); ++i) m.last.b[i] = rng.normal(0.0, 0.05);

    frames.clear();
    target.clear();
    for (int f = 0; f < 3; ++f) {
      frames.push_back(rand_tensor(rng, {cfg.in_channels, 8, 8}, 0.6));
      target.push_back(rand_tensor(rng, {cfg.out_channels, 8, 8}, 0.5));
    }

    // the block's pre-activation does not depend on its own threshold, so
    // measure the emitted lattice first and park every threshold outside it
    // at the required clearance, then re-run to confirm nothing moved
    const auto extent = [&](std::vector<double>& lo, std::vector<double>& hi) {
      BrveTrace<double> tr;
      (void)brve_forward(m, frames, 1, &tr);
      for (const auto& ot : tr.outs) {
        const auto& y = ot.u3.groups.back().back().rpre_in;
        const int64_t n = y.dim(1) * y.dim(2);
        for (int64_t ch = 0; ch < y.dim(0); ++ch)
          for (int64_t i = 0; i < n; ++i) {
            lo[static_cast<std::size_t>(ch)] =
                std::min(lo[static_cast<std::size_t>(ch)], y[ch * n + i]);
            hi[static_cast<std::size_t>(ch)] =
                std::max(hi[static_cast<std::size_t>(ch)], y[ch * n + i]);
          }
      }
    };
    const std::size_t nch = static_cast<std::size_t>(blk.act.zeta.numel());
    std::vector<double> lo(nch, 1e18), hi(nch, -1e18);
    extent(lo, hi);
    for (std::size_t ch = 0; ch < nch; ++ch) {
      const double slack = req_margin + 0.02 + 0.05 * rng.u01();
      blk.act.zeta[static_cast<int64_t>(ch)] =
          rng.u01() < 0.5 ? hi[ch] + slack : lo[ch] - slack;
    }
    std::vector<double> lo2(nch, 1e18), hi2(nch, -1e18);
    extent(lo2, hi2);
    double margin = 1e9;
    for (std::size_t ch = 0; ch < nch; ++ch) {
      const double z = blk.act.zeta[static_cast<int64_t>(ch)];
      margin = std::min(margin, std::min(std::fabs(lo2[ch] - z), std::fabs(hi2[ch] - z)));
      if (z > lo2[ch] && z < hi2[ch]) margin = 0;  // landed inside the lattice
    }
    if (margin > req_margin) {
      found = true;
    } else {
      ++rep.reseeds;
    }
  }
  if (!found) {
    // count it as one failed probe so the report cannot silently pass
    rec.record("pipeline.margin", 0, 0.0, 1.0);
    return;
  }

  const auto loss = [&]() {
    return charbonnier(brve_forward(m, frames, 1), target, 1e-3);
  };
  BrveTrace<double> tr;
  const auto out = brve_forward(m, frames, 1, &tr);
  BrveModelT<double> grads = zeros_like(m);
  brve_backward(charbonnier_backward(out, target, 1e-3), m, tr, grads);

  const int64_t nw = m.last.w.numel();
  for (const int64_t i : {int64_t{0}, nw / 3, (2 * nw) / 3, nw - 1})
    rec.fd("pipeline.last.w", i, m.last.w[i], grads.last.w[i], loss);
  for (int64_t o = 0; o < m.last.b.numel(); ++o)
    rec.fd("pipeline.last.b", o, m.last.b[o], grads.last.b[o], loss);

  auto& blk = m.u3.groups.back().back();
  auto& gblk = grads.u3.groups.back().back();
  for (const int64_t ch : {int64_t{0}, int64_t{5}}) {
    rec.fd("pipeline.final_block.gamma", ch, blk.act.gamma[ch], gblk.act.gamma[ch], loss);
    rec.fd("pipeline.final_block.zeta", ch, blk.act.zeta[ch], gblk.act.zeta[ch], loss);
    rec.fd("pipeline.final_block.beta", ch, blk.act.beta[ch], gblk.act.beta[ch], loss);
  }
  for (const int64_t i : {int64_t{1}, int64_t{7}})
    rec.fd("pipeline.final_block.daca_k", i, blk.daca.kernel[i], gblk.daca.kernel[i], loss);
  rec.fd("pipeline.final_block.daca_b", 0, blk.daca.bias[0], gblk.daca.bias[0], loss);
}

// ---- group: surrogate paths re-derived naively ----

// Direct loop transcription of the surrogate rules: sign() passes gradient
// inside |x| <= 1, the per-filter scale is constant, statistics and gate are
// exact. Everything is written against the defining sums, independently of
// the packed implementation in dabc_backward.
struct NaiveSurrogate {
  TensorT<double> dlatent;
  std::vector<double> dalpha;
};

NaiveSurrogate naive_surrogate(const TensorT<double>& a, const BinConvT<double>& l,
                               const TensorT<double>& g) {
  const int64_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  const int64_t co = l.latent.dim(0), k = l.latent.dim(2), pad = k / 2;
  const int64_t hp = h + 2 * pad, wp = w + 2 * pad;
  const auto sgn = [](double v) { return v > 0 ? 1.0 : -1.0; };
  const auto win = [](double v) { return std::fabs(v) <= 1.0 ? 1.0 : 0.0; };

  TensorT<double> ap({c, hp, wp});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < hp; ++y)
      for (int64_t x = 0; x < wp; ++x) {
        const int64_t sy = y - pad, sx = x - pad;
        const double v = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? a(ch, sy, sx) : 0.0;
        ap(ch, y, x) = v - l.alpha[ch];
      }

  std::vector<double> scale(static_cast<std::size_t>(co));
  const int64_t fan = c * k * k;
  for (int64_t o = 0; o < co; ++o) {
    double s = 0;
    for (int64_t i = 0; i < fan; ++i) s += std::fabs(l.latent[o * fan + i]);
    scale[static_cast<std::size_t>(o)] = s / static_cast<double>(fan);
  }

  TensorT<double> ints({co, h, w});
  for (int64_t o = 0; o < co; ++o)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double acc = 0;
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t ki = 0; ki < k; ++ki)
            for (int64_t kj = 0; kj < k; ++kj)
              acc += sgn(ap(ch, y + ki, x + kj)) * sgn(l.latent(o, ch, ki, kj));
        ints(o, y, x) = acc;
      }

  // per-channel statistics of the interior, then the gate
  std::vector<double> ma(static_cast<std::size_t>(c)), mu(static_cast<std::size_t>(c)),
      sd(static_cast<std::size_t>(c));
  const double inv_n = 1.0 / static_cast<double>(h * w);
  for (int64_t ch = 0; ch < c; ++ch) {
    double s = 0, sa = 0;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double v = ap(ch, y + pad, x + pad);
        s += v;
        sa += std::fabs(v);
      }
    mu[static_cast<std::size_t>(ch)] = s * inv_n;
    ma[static_cast<std::size_t>(ch)] = sa * inv_n;
    double var = 0;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double d = ap(ch, y + pad, x + pad) - mu[static_cast<std::size_t>(ch)];
        var += d * d;
      }
    sd[static_cast<std::size_t>(ch)] = std::sqrt(var * inv_n);
  }
  const int64_t gk = l.daca.kernel.dim(1), ghalf = gk / 2;
  std::vector<double> gate(static_cast<std::size_t>(co)), dz(static_cast<std::size_t>(co));
  for (int64_t o = 0; o < co; ++o) {
    double z = l.daca.bias[0];
    for (int64_t j = 0; j < gk; ++j) {
      const int64_t q = o + j - ghalf;
      if (q < 0 || q >= c) continue;
      z += l.daca.kernel(0, j) * ma[static_cast<std::size_t>(q)] +
           l.daca.kernel(1, j) * mu[static_cast<std::size_t>(q)] +
           l.daca.kernel(2, j) * sd[static_cast<std::size_t>(q)];
    }
    gate[static_cast<std::size_t>(o)] = 1.0 / (1.0 + std::exp(-z));
  }

  NaiveSurrogate r;
  r.dlatent = TensorT<double>(l.latent.shape(), 0.0);
  for (int64_t o = 0; o < co; ++o)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t ki = 0; ki < k; ++ki)
        for (int64_t kj = 0; kj < k; ++kj) {
          double acc = 0;
          for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
              acc += g(o, y, x) * scale[static_cast<std::size_t>(o)] *
                     gate[static_cast<std::size_t>(o)] * sgn(ap(ch, y + ki, x + kj));
          r.dlatent(o, ch, ki, kj) = acc * win(l.latent(o, ch, ki, kj));
        }

  TensorT<double> dap({c, hp, wp}, 0.0);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t py = 0; py < hp; ++py)
      for (int64_t px = 0; px < wp; ++px) {
        double acc = 0;
        for (int64_t o = 0; o < co; ++o)
          for (int64_t ki = 0; ki < k; ++ki)
            for (int64_t kj = 0; kj < k; ++kj) {
              const int64_t y = py - ki, x = px - kj;
              if (y >= 0 && y < h && x >= 0 && x < w)
                acc += g(o, y, x) * scale[static_cast<std::size_t>(o)] *
                       gate[static_cast<std::size_t>(o)] * sgn(l.latent(o, ch, ki, kj));
            }
        dap(ch, py, px) = acc * win(ap(ch, py, px));
      }

  for (int64_t o = 0; o < co; ++o) {
    double dd = 0;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        dd += g(o, y, x) * ints(o, y, x) * scale[static_cast<std::size_t>(o)];
    dz[static_cast<std::size_t>(o)] =
        dd * gate[static_cast<std::size_t>(o)] * (1.0 - gate[static_cast<std::size_t>(o)]);
  }
  std::vector<double> dma(static_cast<std::size_t>(c), 0.0), dmu(static_cast<std::size_t>(c), 0.0),
      dsd(static_cast<std::size_t>(c), 0.0);
  for (int64_t o = 0; o < co; ++o)
    for (int64_t j = 0; j < gk; ++j) {
      const int64_t q = o + j - ghalf;
      if (q < 0 || q >= c) continue;
      dma[static_cast<std::size_t>(q)] += dz[static_cast<std::size_t>(o)] * l.daca.kernel(0, j);
      dmu[static_cast<std::size_t>(q)] += dz[static_cast<std::size_t>(o)] * l.daca.kernel(1, j);
      dsd[static_cast<std::size_t>(q)] += dz[static_cast<std::size_t>(o)] * l.daca.kernel(2, j);
    }
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double v = ap(ch, y + pad, x + pad);
        const double s0 = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
        double add = dma[static_cast<std::size_t>(ch)] * s0 * inv_n +
                     dmu[static_cast<std::size_t>(ch)] * inv_n;
        if (sd[static_cast<std::size_t>(ch)] > 0)
          add += dsd[static_cast<std::size_t>(ch)] * (v - mu[static_cast<std::size_t>(ch)]) *
                 inv_n / sd[static_cast<std::size_t>(ch)];
        dap(ch, y + pad, x + pad) += add;
      }

  r.dalpha.assign(static_cast<std::size_t>(c), 0.0);
  for (int64_t ch = 0; ch < c; ++ch) {
    double acc = 0;
    for (int64_t i = 0; i < hp * wp; ++i) acc += dap[ch * hp * wp + i];
    r.dalpha[static_cast<std::size_t>(ch)] = -acc;
  }
  return r;
}

void check_surrogate(Recorder& rec, GradCheckReport& rep, const BinConvT<double>& layer,
                     std::uint64_t seed) {
  BinConvT<double> l = layer;
  CounterRng setup(seed, 16);
  for (int64_t i = 0; i < l.daca.kernel.numel(); ++i) l.daca.kernel[i] = setup.normal(0.0, 0.3);
  l.daca.bias[0] = setup.normal(0.0, 0.2);
  // push a few latent weights outside the clip window so its mask is active
  l.latent[0] = 1.6;
  l.latent[l.latent.numel() / 2] = -1.3;
  l.latent[l.latent.numel() - 1] = 1.05;
  update_derived(l);
  for (int64_t ch = 0; ch < l.alpha.numel(); ++ch) l.alpha[ch] = setup.uniform(-0.05, 0.05);

  // inputs drawn inside +-0.8 with |alpha| <= 0.05 keep the whole shifted
  // activation (pad ring included) at least 0.15 from the clip transition
  const int64_t ci = l.in_channels(), co = l.out_channels();
  TensorT<double> a;
  bool found = false;
  for (std::uint64_t attempt = 0; attempt < 50 && !found; ++attempt) {
    CounterRng rng(seed, substream(seed, 17, attempt));
    a = TensorT<double>({ci, 6, 6});
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = rng.uniform(-0.8, 0.8);
    DabcTrace<double> tr;
    (void)dabc_forward(a, l, true, &tr);
    double margin = 1e9;
    for (int64_t i = 0; i < tr.aprime_pad.numel(); ++i)
      margin = std::min(margin, std::fabs(1.0 - std::fabs(tr.aprime_pad[i])));
    bool sd_ok = true;
    for (int64_t ch = 0; ch < ci; ++ch)
      if (tr.stat_x(2, ch) <= 1e-4) sd_ok = false;
    if (margin > 0.1 && sd_ok) {
      found = true;
    } else {
      ++rep.reseeds;
    }
  }
  if (!found) {
    rec.record("surrogate.margin", 0, 0.0, 1.0);
    return;
  }

  CounterRng rng(seed, 18);
  const TensorT<double> g = rand_tensor(rng, {co, 6, 6}, 1.0);
  DabcTrace<double> tr;
  (void)dabc_forward(a, l, true, &tr);
  BinConvT<double> gl = zero_grads_of(l);
  (void)dabc_backward(g, tr, l, gl);

  const NaiveSurrogate naive = naive_surrogate(a, l, g);
  for (int64_t i = 0; i < gl.latent.numel(); ++i)
    rec.record("surrogate.latent", i, naive.dlatent[i], gl.latent[i]);
  for (int64_t ch = 0; ch < ci; ++ch)
    rec.record("surrogate.alpha", ch, naive.dalpha[static_cast<std::size_t>(ch)], gl.alpha[ch]);
}

}  // namespace

GradCheckReport run_gradcheck(std::uint64_t seed, double tolerance, double margin) {
  if (margin <= 0 || margin > 0.1)
    throw std::invalid_argument(
        "gradcheck: margin must be in (0, 0.1]; the operator probes construct "
        "their inputs at least 0.1 from every breakpoint");
  GradCheckReport rep;
  rep.tolerance = tolerance;
  rep.margin = margin;
  Recorder rec{rep};

  const BrveModelT<double> m = init_model<double>(probe_config(), mix64(seed));

  check_rprelu(rec, m.u1.groups[0][0].act, "rprelu.u1", substream(seed, 1));
  check_rprelu(rec, m.u2.groups[1].blocks[0].act, "rprelu.u2", substream(seed, 2));
  check_rprelu(rec, m.u3.groups.back().back().act, "rprelu.u3", substream(seed, 3));

  check_daca(rec, m.u1.groups[0][0], "daca.u1", substream(seed, 4));
  check_daca(rec, m.u3.groups[2][0], "daca.u3", substream(seed, 5));

  check_fp_conv(rec, m.stem, "fp.stem", substream(seed, 6));
  check_fp_conv(rec, m.last, "fp.last", substream(seed, 7));
  check_fp_conv(rec, m.u2.groups[0].fuse.proj, "fp.proj", substream(seed, 8));

  check_pipeline_tail(rec, rep, seed, margin);
  check_surrogate(rec, rep, m.u1.groups[1][0], seed);

  rep.pass = rep.max_rel < rep.tolerance;
  return rep;
}

}  // namespace brve
