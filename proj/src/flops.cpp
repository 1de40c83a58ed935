#include "brve/model.hpp"

namespace brve {

namespace {

// Elementwise accounting: binary conv MACs go to ops_bin; everything real
// (rescales, activations, statistics, full-precision convs, pooling and
// interpolation arithmetic) goes to ops_fp. Shifts, pads and concats move
// memory only and count as zero.
struct CostAcc {
  double ops_fp = 0;
  double ops_bin = 0;
  std::int64_t params_fp = 0;
  std::int64_t params_bin = 0;

  void fp_conv(double co, double ci, double k, double h, double w) {
    ops_fp += conv_macs(co, ci, k, h, w) + co * h * w;  // MACs + bias adds
  }
  void fp_conv_params(std::int64_t co, std::int64_t ci, std::int64_t k) {
    params_fp += co * ci * k * k + co;
  }
  void bin_conv(double co, double ci, double k, double h, double w, bool gate, int daca_k) {
    ops_bin += conv_macs(co, ci, k, h, w);
    ops_fp += (gate ? 2.0 : 1.0) * co * h * w;  // scale and gate rescaling
    if (gate) {
      ops_fp += 3.0 * ci * h * w;                    // channel statistics passes
      ops_fp += co * (3.0 * daca_k) + co * 4.0;      // gate conv + sigmoid
    }
  }
  void bin_conv_params(std::int64_t co, std::int64_t ci, std::int64_t k, bool gate, int daca_k) {
    params_bin += co * ci * k * k;
    params_fp += ci + 3 * co;  // threshold + activation
    if (gate) params_fp += 3 * daca_k + 1;
  }
  void rprelu(double c, double h, double w) { ops_fp += 2.0 * c * h * w; }
  void add(double c, double h, double w) { ops_fp += c * h * w; }
  void pool(double c, double h, double w) { ops_fp += c * h * w; }  // per input element
  void up(double c, double ho, double wo) { ops_fp += 6.0 * c * ho * wo; }
};

struct Geometry {
  double c, h, w;
};

void block_cost(CostAcc& a, const Geometry& g, bool gate, int daca_k) {
  a.bin_conv(g.c, g.c, 3, g.h, g.w, gate, daca_k);
  a.rprelu(g.c, g.h, g.w);
  a.add(g.c, g.h, g.w);  // shortcut
}

void fusion_cost(CostAcc& a, double ci, const Geometry& g) {
  a.bin_conv(g.c, ci, 3, g.h, g.w, /*gate=*/false, 0);
  a.rprelu(g.c, g.h, g.w);
  a.fp_conv(g.c, ci, 1, g.h, g.w);
  a.add(g.c, g.h, g.w);
}

// One U-Net pass over a {C,h,w} input: per-group block costs at their
// resolutions plus the pooling, upsampling and skip additions between them.
void unet_cost(CostAcc& a, const ModelConfig& cfg, double h, double w) {
  const double c = cfg.base_channels;
  const int levels = cfg.levels;
  for (int g = 0; g < 2 * levels + 1; ++g) {
    const int depth = g <= levels ? g : 2 * levels - g;
    const double gh = h / static_cast<double>(std::int64_t(1) << depth);
    const double gw = w / static_cast<double>(std::int64_t(1) << depth);
    if (g > levels) {
      a.up(c, gh, gw);
      a.add(c, gh, gw);  // skip
    }
    for (int b = 0; b < cfg.blocks_per_level; ++b)
      block_cost(a, {c, gh, gw}, cfg.daca_enabled, cfg.daca_k);
    if (g < levels) a.pool(c, gh, gw);
  }
}

// One shift U-Net pass over a 3-slot window; every group re-expands to 3C/2
// and fuses back, and all slot work happens three times.
void shift_unet_cost(CostAcc& a, const ModelConfig& cfg, double h, double w) {
  const double c = cfg.base_channels;
  const int levels = cfg.levels;
  for (int g = 0; g < 2 * levels + 1; ++g) {
    const int depth = g <= levels ? g : 2 * levels - g;
    const double gh = h / static_cast<double>(std::int64_t(1) << depth);
    const double gw = w / static_cast<double>(std::int64_t(1) << depth);
    for (int s = 0; s < 3; ++s) {
      if (g > levels) {
        a.up(c, gh, gw);
        a.add(c, gh, gw);
      }
      fusion_cost(a, 1.5 * c, {c, gh, gw});
      for (int b = 0; b < cfg.blocks_per_level; ++b)
        block_cost(a, {c, gh, gw}, cfg.daca_enabled, cfg.daca_k);
      if (g < levels) a.pool(c, gh, gw);
    }
  }
}

void unet_params(CostAcc& a, const ModelConfig& cfg) {
  const int n = (2 * cfg.levels + 1) * cfg.blocks_per_level;
  for (int i = 0; i < n; ++i)
    a.bin_conv_params(cfg.base_channels, cfg.base_channels, 3, cfg.daca_enabled, cfg.daca_k);
}

void fusion_params(CostAcc& a, std::int64_t co, std::int64_t ci) {
  a.bin_conv_params(co, ci, 3, false, 0);
  a.fp_conv_params(co, ci, 1);
}

}  // namespace

FlopsReport count_flops(const ModelConfig& cfg, int t, std::int64_t raw_h, std::int64_t raw_w,
                        int stride) {
  cfg.validate();
  if (raw_h % 2 || raw_w % 2)
    throw std::invalid_argument("count_flops: raw dims must be even for packing");
  const double h = static_cast<double>(raw_h) / 2.0;
  const double w = static_cast<double>(raw_w) / 2.0;
  const double c = cfg.base_channels;
  const SchedulePlan plan = plan_schedule(t, stride);

  CostAcc a;
  // stage 1, once per frame
  CostAcc s1;
  s1.fp_conv(c, cfg.in_channels, 3, h, w);
  unet_cost(s1, cfg, h, w);
  a.ops_fp += s1.ops_fp * t;
  a.ops_bin += s1.ops_bin * t;

  // stage 2, once per window
  CostAcc s2;
  shift_unet_cost(s2, cfg, h, w);
  a.ops_fp += s2.ops_fp * static_cast<double>(plan.windows.size());
  a.ops_bin += s2.ops_bin * static_cast<double>(plan.windows.size());

  // stage 3, once per emitted frame (every frame is emitted exactly once)
  CostAcc s3;
  fusion_cost(s3, 2.0 * c, {c, h, w});
  unet_cost(s3, cfg, h, w);
  s3.fp_conv(cfg.out_channels, c, 3, h, w);
  a.ops_fp += s3.ops_fp * t;
  a.ops_bin += s3.ops_bin * t;

  // parameters, counted once
  a.fp_conv_params(cfg.base_channels, cfg.in_channels, 3);
  unet_params(a, cfg);
  for (int g = 0; g < 2 * cfg.levels + 1; ++g) {
    fusion_params(a, cfg.base_channels, 3 * cfg.base_channels / 2);
    for (int b = 0; b < cfg.blocks_per_level; ++b)
      a.bin_conv_params(cfg.base_channels, cfg.base_channels, 3, cfg.daca_enabled, cfg.daca_k);
  }
  fusion_params(a, cfg.base_channels, 2 * cfg.base_channels);
  unet_params(a, cfg);
  a.fp_conv_params(cfg.out_channels, cfg.base_channels, 3);

  FlopsReport r;
  r.frames = t;
  r.stride = stride;
  r.windows = static_cast<int>(plan.windows.size());
  r.ops_fp = a.ops_fp;
  r.ops_bin = a.ops_bin;
  r.params_fp = a.params_fp;
  r.params_bin = a.params_bin;
  return r;
}

}  // namespace brve
