#include "brve/model.hpp"

#include <cmath>
#include <stdexcept>

#include "brve/rng.hpp"

namespace brve {

void ModelConfig::validate() const {
  if (levels < 1) throw std::invalid_argument("config: levels must be >= 1");
  if (base_channels < 2 || base_channels % 2)
    throw std::invalid_argument("config: base_channels must be even and >= 2, got " +
                                std::to_string(base_channels));
  if (blocks_per_level < 1) throw std::invalid_argument("config: blocks_per_level must be >= 1");
  if (daca_k < 1 || daca_k % 2 == 0)
    throw std::invalid_argument("config: daca_k must be odd, got " + std::to_string(daca_k));
  if (window != 3) throw std::invalid_argument("config: window must be 3 (cyclic shift arity)");
  if (stride < 1 || stride > 3)
    throw std::invalid_argument("config: stride must be 1, 2 or 3, got " + std::to_string(stride));
  if (in_channels < 1 || out_channels < 1)
    throw std::invalid_argument("config: channel counts must be positive");
}

namespace {

// Counter-based generator so initialization is reproducible across platforms
// (the standard distributions are not).
struct InitRng {
  std::uint64_t seed;
  std::uint64_t ctr = 0;

  double u01() {
    const std::uint64_t bits = substream(seed, 1, ctr++);
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
  }
  double uniform(double a, double b) { return a + (b - a) * u01(); }
  double normal(double sd) {
    const double u1 = u01(), u2 = u01();
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return sd * r * std::cos(6.283185307179586476925287 * u2);
  }
};

template <typename T>
void fill_normal(TensorT<T>& t, double sd, InitRng& rng) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal(sd));
}

template <typename T>
void fill_uniform(TensorT<T>& t, double bound, InitRng& rng) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void init_fp_conv(FpConvT<T>& c, std::int64_t co, std::int64_t ci, int k, int pad, InitRng& rng) {
  c.w = TensorT<T>({co, ci, k, k});
  c.b = TensorT<T>({co});
  c.stride = 1;
  c.pad = pad;
  const double bound = 1.0 / std::sqrt(static_cast<double>(ci * k * k));
  fill_uniform(c.w, bound, rng);
  fill_uniform(c.b, bound, rng);
}

template <typename T>
void init_bin_conv(BinConvT<T>& c, std::int64_t co, std::int64_t ci, int k, bool with_daca,
                   int daca_k, InitRng& rng) {
  c.latent = TensorT<T>({co, ci, k, k});
  // attenuated fan-in scaling: the weight scale S = mean|latent| starts small,
  // so residual blocks open near identity instead of injecting sign noise
  fill_normal(c.latent, 0.05 * std::sqrt(2.0 / static_cast<double>(ci * k * k)), rng);
  c.alpha = TensorT<T>({ci}, T(0));
  c.act.gamma = TensorT<T>({co}, T(0));
  c.act.zeta = TensorT<T>({co}, T(0));
  c.act.beta = TensorT<T>({co}, T(0.25));
  c.has_daca = with_daca;
  if (with_daca) {
    // zero gate parameters start every channel at sigmoid(0) = 0.5
    c.daca.kernel = TensorT<T>({3, daca_k}, T(0));
    c.daca.bias = TensorT<T>({1}, T(0));
  }
  c.stride = 1;
  update_derived(c);
}

template <typename T>
void init_fusion(FusionT<T>& f, std::int64_t co, std::int64_t ci, InitRng& rng) {
  init_bin_conv(f.conv, co, ci, 3, /*with_daca=*/false, 1, rng);
  init_fp_conv(f.proj, co, ci, 1, 0, rng);
}

template <typename T>
void init_unet(UnetT<T>& u, const ModelConfig& cfg, InitRng& rng) {
  u.groups.assign(static_cast<std::size_t>(2 * cfg.levels + 1), {});
  for (auto& g : u.groups) {
    g.resize(static_cast<std::size_t>(cfg.blocks_per_level));
    for (auto& b : g)
      init_bin_conv(b, cfg.base_channels, cfg.base_channels, 3, cfg.daca_enabled, cfg.daca_k, rng);
  }
}

template <typename T>
void init_shift_unet(ShiftUnetT<T>& u, const ModelConfig& cfg, InitRng& rng) {
  u.groups.assign(static_cast<std::size_t>(2 * cfg.levels + 1), {});
  const std::int64_t c = cfg.base_channels;
  for (auto& g : u.groups) {
    init_fusion(g.fuse, c, 3 * c / 2, rng);
    g.blocks.resize(static_cast<std::size_t>(cfg.blocks_per_level));
    for (auto& b : g.blocks)
      init_bin_conv(b, c, c, 3, cfg.daca_enabled, cfg.daca_k, rng);
  }
}

}  // namespace

template <typename T>
BrveModelT<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  BrveModelT<T> m;
  m.cfg = cfg;
  InitRng rng{mix64(seed)};
  init_fp_conv(m.stem, cfg.base_channels, cfg.in_channels, 3, 1, rng);
  init_unet(m.u1, cfg, rng);
  init_shift_unet(m.u2, cfg, rng);
  init_fusion(m.fuse3, cfg.base_channels, 2 * cfg.base_channels, rng);
  init_unet(m.u3, cfg, rng);
  init_fp_conv(m.last, cfg.out_channels, cfg.base_channels, 3, 1, rng);
  // near-zero reconstruction head: the model starts at (almost) the zero image
  // and training shapes the output instead of unlearning a random projection
  for (std::int64_t i = 0; i < m.last.w.numel(); ++i) m.last.w[i] *= T(1e-3);
  for (std::int64_t i = 0; i < m.last.b.numel(); ++i) m.last.b[i] *= T(1e-3);
  return m;
}

namespace {

template <typename T>
using ParamFn = std::function<void(const std::string&, TensorT<T>&)>;

template <typename T>
void visit_bin_conv(const std::string& prefix, BinConvT<T>& c, const ParamFn<T>& fn) {
  fn(prefix + ".latent", c.latent);
  fn(prefix + ".alpha", c.alpha);
  fn(prefix + ".gamma", c.act.gamma);
  fn(prefix + ".zeta", c.act.zeta);
  fn(prefix + ".beta", c.act.beta);
  if (c.has_daca) {
    fn(prefix + ".daca_k", c.daca.kernel);
    fn(prefix + ".daca_b", c.daca.bias);
  }
}

template <typename T>
void visit_fusion(const std::string& prefix, FusionT<T>& f, const ParamFn<T>& fn) {
  visit_bin_conv(prefix + ".conv", f.conv, fn);
  fn(prefix + ".proj_w", f.proj.w);
  fn(prefix + ".proj_b", f.proj.b);
}

template <typename T>
void visit_unet(const std::string& prefix, UnetT<T>& u, const ParamFn<T>& fn) {
  for (std::size_t g = 0; g < u.groups.size(); ++g)
    for (std::size_t b = 0; b < u.groups[g].size(); ++b)
      visit_bin_conv(prefix + ".g" + std::to_string(g) + ".b" + std::to_string(b), u.groups[g][b],
                     fn);
}

template <typename T>
void visit_shift_unet(const std::string& prefix, ShiftUnetT<T>& u, const ParamFn<T>& fn) {
  for (std::size_t g = 0; g < u.groups.size(); ++g) {
    const std::string gp = prefix + ".g" + std::to_string(g);
    visit_fusion(gp + ".fuse", u.groups[g].fuse, fn);
    for (std::size_t b = 0; b < u.groups[g].blocks.size(); ++b)
      visit_bin_conv(gp + ".b" + std::to_string(b), u.groups[g].blocks[b], fn);
  }
}

}  // namespace

template <typename T>
void visit_params(BrveModelT<T>& m, const ParamFn<T>& fn) {
  fn("stem.w", m.stem.w);
  fn("stem.b", m.stem.b);
  visit_unet("u1", m.u1, fn);
  visit_shift_unet("u2", m.u2, fn);
  visit_fusion("fuse3", m.fuse3, fn);
  visit_unet("u3", m.u3, fn);
  fn("last.w", m.last.w);
  fn("last.b", m.last.b);
}

template <typename T>
void visit_binconvs(BrveModelT<T>& m, const std::function<void(BinConvT<T>&)>& fn) {
  for (auto& g : m.u1.groups)
    for (auto& b : g) fn(b);
  for (auto& g : m.u2.groups) {
    fn(g.fuse.conv);
    for (auto& b : g.blocks) fn(b);
  }
  fn(m.fuse3.conv);
  for (auto& g : m.u3.groups)
    for (auto& b : g) fn(b);
}

// ---- schedule ----

SchedulePlan plan_schedule(int t, int stride) {
  if (t < 1) throw std::invalid_argument("schedule: need at least one frame");
  if (stride < 1 || stride > 3)
    throw std::invalid_argument("schedule: stride must be 1, 2 or 3, got " +
                                std::to_string(stride));
  SchedulePlan plan;
  plan.t = t;
  plan.stride = stride;
  const auto zero = SlotSrc{};
  const auto s1 = [](int f) { return SlotSrc{SlotSrc::Kind::stage1, f, -1, -1}; };
  const auto prev = [](int w, int s) { return SlotSrc{SlotSrc::Kind::win_out, -1, w, s}; };

  if (stride == 1) {
    // One window per frame; slots carry the previous window's two newest
    // refinements plus the current frame. Output 0 lags two frames behind,
    // so the last window flushes its remaining two slots.
    for (int k = 0; k < t; ++k) {
      WindowPlan w;
      w.slots = k == 0 ? std::array<SlotSrc, 3>{zero, zero, s1(k)}
                       : std::array<SlotSrc, 3>{prev(k - 1, 1), prev(k - 1, 2), s1(k)};
      const bool last = k == t - 1;
      w.emit = {k - 2 >= 0 ? k - 2 : -1, last && k - 1 >= 0 ? k - 1 : -1, last ? k : -1};
      plan.windows.push_back(w);
    }
  } else if (stride == 2) {
    // Windows advance two frames; slot 0 holds the carried refinement of the
    // frame between windows. An odd tail gets its own zero-padded window.
    int j = 0;
    for (; j + 1 <= t - 1; j += 2) {
      WindowPlan w;
      const int widx = static_cast<int>(plan.windows.size());
      w.slots = {j == 0 ? zero : prev(widx - 1, 2), s1(j), s1(j + 1)};
      w.emit = {j - 1 >= 0 ? j - 1 : -1, j, j + 1 == t - 1 ? j + 1 : -1};
      plan.windows.push_back(w);
    }
    if (j == t - 1) {
      WindowPlan w;
      const int widx = static_cast<int>(plan.windows.size());
      w.slots = {widx == 0 ? zero : prev(widx - 1, 2), s1(j), zero};
      w.emit = {j - 1 >= 0 ? j - 1 : -1, j, -1};
      plan.windows.push_back(w);
    }
  } else {
    // Stateless windows over disjoint triples, zero-padded at the tail.
    for (int j = 0; j <= t - 1; j += 3) {
      WindowPlan w;
      w.slots = {s1(j), j + 1 <= t - 1 ? s1(j + 1) : zero, j + 2 <= t - 1 ? s1(j + 2) : zero};
      w.emit = {j, j + 1 <= t - 1 ? j + 1 : -1, j + 2 <= t - 1 ? j + 2 : -1};
      plan.windows.push_back(w);
    }
  }
  return plan;
}

// ---- forward ----

template <typename T>
TensorT<T> unet_forward(const TensorT<T>& x, const UnetT<T>& u, bool daca_on,
                        UnetTrace<T>* trace) {
  const int levels = u.levels();
  const std::int64_t div = std::int64_t(1) << levels;
  if (x.rank() != 3) throw std::invalid_argument("unet: expected {C,H,W}");
  if (x.dim(1) % div || x.dim(2) % div)
    throw std::invalid_argument("unet: spatial dims " + std::to_string(x.dim(1)) + "x" +
                                std::to_string(x.dim(2)) + " not divisible by 2^levels = " +
                                std::to_string(div));
  if (trace) trace->groups.resize(u.groups.size());
  std::vector<TensorT<T>> skips(static_cast<std::size_t>(levels));
  TensorT<T> cur = x;
  const int n = static_cast<int>(u.groups.size());
  for (int g = 0; g < n; ++g) {
    if (g > levels) {
      TensorT<T> up = bilinear_up2(cur);
      const TensorT<T>& skip = skips[static_cast<std::size_t>(2 * levels - g)];
      for (std::int64_t i = 0; i < up.numel(); ++i) up[i] += skip[i];
      cur = std::move(up);
    }
    const auto& blocks = u.groups[static_cast<std::size_t>(g)];
    if (trace) trace->groups[static_cast<std::size_t>(g)].resize(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b)
      cur = binary_conv_block(cur, blocks[b], daca_on,
                              trace ? &trace->groups[static_cast<std::size_t>(g)][b] : nullptr);
    if (g < levels) {
      skips[static_cast<std::size_t>(g)] = cur;
      cur = avg_pool2(cur);
    }
  }
  return cur;
}

template <typename T>
std::array<TensorT<T>, 3> shift_unet_forward(const std::array<TensorT<T>, 3>& window,
                                             const ShiftUnetT<T>& u, bool daca_on,
                                             ShiftUnetTrace<T>* trace) {
  const int levels = u.levels();
  const std::int64_t div = std::int64_t(1) << levels;
  for (const auto& f : window) {
    if (f.rank() != 3) throw std::invalid_argument("shift_unet: expected {C,H,W} slots");
    if (!f.same_shape(window[0]))
      throw std::invalid_argument("shift_unet: window slots disagree in shape");
  }
  if (window[0].dim(1) % div || window[0].dim(2) % div)
    throw std::invalid_argument("shift_unet: spatial dims not divisible by 2^levels");
  if (trace) trace->groups.resize(u.groups.size());

  std::vector<std::array<TensorT<T>, 3>> skips(static_cast<std::size_t>(levels));
  std::array<TensorT<T>, 3> cur = window;
  const int n = static_cast<int>(u.groups.size());
  for (int g = 0; g < n; ++g) {
    if (g > levels) {
      auto& skip = skips[static_cast<std::size_t>(2 * levels - g)];
      for (int s = 0; s < 3; ++s) {
        TensorT<T> up = bilinear_up2(cur[static_cast<std::size_t>(s)]);
        const TensorT<T>& sk = skip[static_cast<std::size_t>(s)];
        for (std::int64_t i = 0; i < up.numel(); ++i) up[i] += sk[i];
        cur[static_cast<std::size_t>(s)] = std::move(up);
      }
    }
    const ShiftDir dir = g % 2 == 0 ? ShiftDir::forward : ShiftDir::backward;
    const std::array<TensorT<T>, 3> shifted = st_shift_window(cur, dir);
    const auto& grp = u.groups[static_cast<std::size_t>(g)];
    ShiftGroupTrace<T>* gt = trace ? &trace->groups[static_cast<std::size_t>(g)] : nullptr;
    for (int s = 0; s < 3; ++s) {
      TensorT<T> x = binary_fusion_block(shifted[static_cast<std::size_t>(s)], grp.fuse,
                                         gt ? &gt->fuse[static_cast<std::size_t>(s)] : nullptr);
      if (gt) gt->blocks[static_cast<std::size_t>(s)].resize(grp.blocks.size());
      for (std::size_t b = 0; b < grp.blocks.size(); ++b)
        x = binary_conv_block(x, grp.blocks[b], daca_on,
                              gt ? &gt->blocks[static_cast<std::size_t>(s)][b] : nullptr);
      cur[static_cast<std::size_t>(s)] = std::move(x);
    }
    if (g < levels) {
      skips[static_cast<std::size_t>(g)] = cur;
      for (auto& f : cur) f = avg_pool2(f);
    }
  }
  return cur;
}

template <typename T>
std::vector<TensorT<T>> brve_forward(const BrveModelT<T>& m, const std::vector<TensorT<T>>& frames,
                                     int stride, BrveTrace<T>* trace) {
  if (frames.empty()) throw std::invalid_argument("forward: empty sequence");
  for (const auto& f : frames) {
    if (f.rank() != 3 || f.dim(0) != m.cfg.in_channels)
      throw std::invalid_argument("forward: frames must be {" +
                                  std::to_string(m.cfg.in_channels) + ",H,W}");
    if (!f.same_shape(frames[0]))
      throw std::invalid_argument("forward: frames disagree in shape");
  }
  const int t = static_cast<int>(frames.size());
  const SchedulePlan plan = plan_schedule(t, stride);
  if (trace) {
    *trace = BrveTrace<T>{};
    trace->plan = plan;
    trace->frames.resize(static_cast<std::size_t>(t));
    trace->windows.resize(plan.windows.size());
  }

  // stage 1: per-frame features
  std::vector<TensorT<T>> f1(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) {
    FrameTrace<T>* ft = trace ? &trace->frames[static_cast<std::size_t>(i)] : nullptr;
    if (ft) ft->stem_in = frames[static_cast<std::size_t>(i)];
    const TensorT<T> stem_out = fp_conv2d(frames[static_cast<std::size_t>(i)], m.stem);
    f1[static_cast<std::size_t>(i)] =
        unet_forward(stem_out, m.u1, /*daca_on=*/true, ft ? &ft->u1 : nullptr);
  }

  const std::int64_t c = m.cfg.base_channels;
  const std::int64_t h = f1[0].dim(1), w = f1[0].dim(2);
  const TensorT<T> zero({c, h, w}, T(0));
  const auto resolve = [&](const SlotSrc& s,
                           const std::vector<std::array<TensorT<T>, 3>>& wins) -> const TensorT<T>& {
    switch (s.kind) {
      case SlotSrc::Kind::stage1:
        return f1[static_cast<std::size_t>(s.frame)];
      case SlotSrc::Kind::win_out:
        return wins[static_cast<std::size_t>(s.win)][static_cast<std::size_t>(s.slot)];
      default:
        return zero;
    }
  };

  // stages 2 and 3: windows in schedule order, reconstruction per emit
  std::vector<std::array<TensorT<T>, 3>> wins(plan.windows.size());
  std::vector<TensorT<T>> out(static_cast<std::size_t>(t));
  for (std::size_t wi = 0; wi < plan.windows.size(); ++wi) {
    const WindowPlan& wp = plan.windows[wi];
    std::array<TensorT<T>, 3> slots = {resolve(wp.slots[0], wins), resolve(wp.slots[1], wins),
                                       resolve(wp.slots[2], wins)};
    wins[wi] = shift_unet_forward(slots, m.u2, /*daca_on=*/true,
                                  trace ? &trace->windows[wi].u2 : nullptr);
    for (int s = 0; s < 3; ++s) {
      const int f = wp.emit[static_cast<std::size_t>(s)];
      if (f < 0) continue;
      OutTrace<T>* ot = nullptr;
      if (trace) {
        trace->outs.emplace_back();
        ot = &trace->outs.back();
        ot->frame = f;
        ot->win = static_cast<int>(wi);
        ot->slot = s;
      }
      const TensorT<T> cat = concat_channels<T>(
          {&f1[static_cast<std::size_t>(f)], &wins[wi][static_cast<std::size_t>(s)]});
      const TensorT<T> fused = binary_fusion_block(cat, m.fuse3, ot ? &ot->fuse3 : nullptr);
      const TensorT<T> u3out =
          unet_forward(fused, m.u3, /*daca_on=*/true, ot ? &ot->u3 : nullptr);
      if (ot) ot->last_in = u3out;
      out[static_cast<std::size_t>(f)] = fp_conv2d(u3out, m.last);
    }
  }
  return out;
}

template BrveModelT<float> init_model<float>(const ModelConfig&, std::uint64_t);
template BrveModelT<double> init_model<double>(const ModelConfig&, std::uint64_t);
template void visit_params<float>(BrveModelT<float>&, const ParamFn<float>&);
template void visit_params<double>(BrveModelT<double>&, const ParamFn<double>&);
template void visit_binconvs<float>(BrveModelT<float>&,
                                    const std::function<void(BinConvT<float>&)>&);
template void visit_binconvs<double>(BrveModelT<double>&,
                                     const std::function<void(BinConvT<double>&)>&);
template TensorT<float> unet_forward<float>(const TensorT<float>&, const UnetT<float>&, bool,
                                            UnetTrace<float>*);
template TensorT<double> unet_forward<double>(const TensorT<double>&, const UnetT<double>&, bool,
                                              UnetTrace<double>*);
template std::array<TensorT<float>, 3> shift_unet_forward<float>(
    const std::array<TensorT<float>, 3>&, const ShiftUnetT<float>&, bool, ShiftUnetTrace<float>*);
template std::array<TensorT<double>, 3> shift_unet_forward<double>(
    const std::array<TensorT<double>, 3>&, const ShiftUnetT<double>&, bool,
    ShiftUnetTrace<double>*);
template std::vector<TensorT<float>> brve_forward<float>(const BrveModelT<float>&,
                                                         const std::vector<TensorT<float>>&, int,
                                                         BrveTrace<float>*);
template std::vector<TensorT<double>> brve_forward<double>(const BrveModelT<double>&,
                                                           const std::vector<TensorT<double>>&,
                                                           int, BrveTrace<double>*);

}  // namespace brve
