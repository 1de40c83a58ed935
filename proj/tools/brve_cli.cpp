#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "brve/checkpoint.hpp"
#include "brve/config.hpp"
#include "brve/model.hpp"
#include "brve/rawpipe.hpp"
#include "brve/rng.hpp"
#include "brve/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace brve;

namespace {

// Shared flag state; each subcommand binds the subset it uses.
struct Flags {
  std::string config;
  std::string in;
  std::string out;
  std::uint64_t seed = 0;
  int stride = 1;
  int steps = 200;
  double tolerance = 1e-4;
};

ModelConfig config_from(const Flags& f) {
  ModelConfig cfg = f.config.empty() ? ModelConfig{} : load_config_file(f.config);
  cfg.stride = f.stride;
  cfg.validate();
  return cfg;
}

void ensure_out_dir(const std::string& out) {
  if (out.empty()) throw std::runtime_error("--out is required for this command");
  fs::create_directories(out);
}

void write_manifest(const std::string& out, const json& manifest) {
  std::ofstream os(fs::path(out) / "manifest.json");
  os << manifest.dump(2) << "\n";
  if (!os) throw std::runtime_error("cannot write manifest to --out '" + out + "'");
}

json base_manifest(const char* command, const Flags& f) {
  json m;
  m["command"] = command;
  m["config"] = f.config.empty() ? "(default)" : f.config;
  m["seed"] = f.seed;
  if (!f.in.empty()) m["in"] = f.in;
  if (!f.out.empty()) m["out"] = f.out;
  return m;
}

// 8-bit grayscale preview of one mosaic frame, values clipped to [0,1].
void write_pgm(const fs::path& path, const DenseTensor& frame) {
  std::ofstream os(path, std::ios::binary);
  os << "P5\n" << frame.dim(1) << " " << frame.dim(0) << "\n255\n";
  for (std::int64_t i = 0; i < frame.numel(); ++i) {
    const double v = std::clamp(static_cast<double>(frame[i]), 0.0, 1.0);
    os.put(static_cast<char>(std::lround(v * 255.0)));
  }
  if (!os) throw std::runtime_error("cannot write preview " + path.string());
}

std::vector<DenseTensor> pack_all(const std::vector<DenseTensor>& frames) {
  std::vector<DenseTensor> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(pack_bayer(f));
  return out;
}

// ---- synth ----

// Fixed desk-scale geometry: ten 64x64 mosaics, default noise model. The
// library call accepts arbitrary sizes; the command keeps the documented flag
// set minimal.
int cmd_synth(const Flags& f) {
  ensure_out_dir(f.out);
  SynthParams p;
  p.t = 10;
  p.h = 64;
  p.w = 64;
  const NoiseParams noise;
  const SynthResult r = synth_sequence(f.seed, p, noise);
  const std::string noisy_path = (fs::path(f.out) / "noisy.rsq1").string();
  const std::string clean_path = (fs::path(f.out) / "clean.rsq1").string();
  save_rsq1(noisy_path, r.noisy);
  save_rsq1(clean_path, r.clean);

  json m = base_manifest("synth", f);
  m["frames"] = p.t;
  m["raw_height"] = p.h;
  m["raw_width"] = p.w;
  m["noise"] = {{"gain", noise.gain}, {"sigma_read", noise.sigma_read}, {"ratio", noise.ratio}};
  m["outputs"] = {noisy_path, clean_path};
  m["metrics"] = {{"noisy_vs_clean_psnr_db",
                   psnr(pack_all(amplify(r.noisy, r.noisy.r).frames), pack_all(r.clean.frames))}};
  write_manifest(f.out, m);
  std::cout << "synth: wrote " << noisy_path << " and " << clean_path << " (seed " << f.seed
            << ")\n";
  return 0;
}

// ---- train ----

struct LoadedPair {
  RawSequence noisy;
  RawSequence clean;
};

LoadedPair load_pair(const std::string& in) {
  if (in.empty()) throw std::runtime_error("--in is required (directory holding noisy.rsq1 and clean.rsq1)");
  LoadedPair p;
  p.noisy = load_rsq1((fs::path(in) / "noisy.rsq1").string());
  p.clean = load_rsq1((fs::path(in) / "clean.rsq1").string());
  if (p.noisy.frames.size() != p.clean.frames.size())
    throw std::runtime_error("--in '" + in + "': noisy and clean frame counts differ");
  return p;
}

int cmd_train(const Flags& f) {
  ensure_out_dir(f.out);
  if (f.steps < 0) throw std::runtime_error("--steps must be >= 0");
  const ModelConfig cfg = config_from(f);
  const LoadedPair pair = load_pair(f.in);
  const RawSequence amped = amplify(pair.noisy, pair.noisy.r);
  const std::int64_t raw_h = amped.frames[0].dim(0), raw_w = amped.frames[0].dim(1);
  const std::int64_t crop = 32;  // raw-domain training patch
  const std::int64_t ch = std::min(crop, raw_h), cw = std::min(crop, raw_w);
  const std::int64_t div = std::int64_t(1) << cfg.levels;
  if ((ch / 2) % div || (cw / 2) % div)
    throw std::runtime_error("--in frames give a " + std::to_string(ch / 2) + "x" +
                             std::to_string(cw / 2) + " packed patch, not divisible by 2^levels=" +
                             std::to_string(div));

  BrveModelT<float> model = init_model<float>(cfg, f.seed);
  const std::string ckpt_path = (fs::path(f.out) / "checkpoint.brve1").string();
  const std::string csv_path = (fs::path(f.out) / "loss.csv").string();

  double final_loss = std::numeric_limits<double>::quiet_NaN();
  if (f.steps > 0) {
    TrainOptions opt;
    opt.steps = f.steps;
    opt.stride = f.stride;
    opt.log_csv = csv_path;
    BatchFn batch = [&](int step, std::vector<DenseTensor>& noisy, std::vector<DenseTensor>& clean) {
      std::int64_t oy = 0, ox = 0;
      if (raw_h > ch || raw_w > cw) {
        // even offsets keep the Bayer phase of every patch
        const std::uint64_t r = substream(f.seed, 600, static_cast<std::uint64_t>(step));
        oy = 2 * static_cast<std::int64_t>((r >> 32) % ((raw_h - ch) / 2 + 1));
        ox = 2 * static_cast<std::int64_t>((r & 0xffffffffu) % ((raw_w - cw) / 2 + 1));
      }
      noisy.clear();
      clean.clear();
      for (std::size_t i = 0; i < amped.frames.size(); ++i) {
        DenseTensor n({ch, cw}), c({ch, cw});
        for (std::int64_t y = 0; y < ch; ++y)
          for (std::int64_t x = 0; x < cw; ++x) {
            n(y, x) = amped.frames[i](oy + y, ox + x);
            c(y, x) = pair.clean.frames[i](oy + y, ox + x);
          }
        noisy.push_back(pack_bayer(n));
        clean.push_back(pack_bayer(c));
      }
    };
    const std::vector<StepLog> log = train_loop(model, batch, opt);
    final_loss = log.back().loss;
  }
  save_checkpoint(ckpt_path, model);

  json m = base_manifest("train", f);
  m["stride"] = f.stride;
  m["steps"] = f.steps;
  m["outputs"] = f.steps > 0 ? json::array({ckpt_path, csv_path}) : json::array({ckpt_path});
  m["metrics"] = {{"final_loss", f.steps > 0 ? json(final_loss) : json(nullptr)}};
  write_manifest(f.out, m);
  std::cout << "train: " << f.steps << " steps, checkpoint at " << ckpt_path << "\n";
  return 0;
}

// ---- enhance ----

int cmd_enhance(const Flags& f, const std::string& checkpoint) {
  ensure_out_dir(f.out);
  if (f.in.empty()) throw std::runtime_error("--in is required (a noisy RSQ1 file)");
  if (checkpoint.empty()) throw std::runtime_error("--checkpoint is required");
  const ModelConfig cfg = config_from(f);
  BrveModelT<float> model = load_checkpoint(checkpoint, cfg);

  const RawSequence noisy = load_rsq1(f.in);
  const RawSequence amped = amplify(noisy, noisy.r);
  std::vector<DenseTensor> packed = pack_all(amped.frames);

  // pad packed dims up to a multiple of 2^levels, run, crop back
  const std::int64_t div = std::int64_t(1) << cfg.levels;
  const std::int64_t h = packed[0].dim(1), w = packed[0].dim(2);
  const std::int64_t hp = (h + div - 1) / div * div, wp = (w + div - 1) / div * div;
  std::vector<DenseTensor> inputs;
  for (const auto& p : packed) {
    if (hp == h && wp == w) {
      inputs.push_back(p);
      continue;
    }
    DenseTensor padded({4, hp, wp}, 0.0f);
    for (std::int64_t c = 0; c < 4; ++c)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) padded(c, y, x) = p(c, y, x);
    inputs.push_back(std::move(padded));
  }

  const std::vector<DenseTensor> outputs = brve_forward(model, inputs, f.stride);

  RawSequence enhanced;
  enhanced.pattern = noisy.pattern;
  enhanced.black_level = noisy.black_level;
  enhanced.white_level = noisy.white_level;
  enhanced.r = 1.0;
  std::vector<DenseTensor> enhanced_packed;
  for (const auto& o : outputs) {
    DenseTensor cropped({4, h, w});
    for (std::int64_t c = 0; c < 4; ++c)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
          cropped(c, y, x) = std::clamp(o(c, y, x), 0.0f, 1.0f);
    enhanced.frames.push_back(unpack_bayer(cropped));
    enhanced_packed.push_back(std::move(cropped));
  }

  const std::string out_rsq1 = (fs::path(f.out) / "enhanced.rsq1").string();
  save_rsq1(out_rsq1, enhanced);
  json outputs_json = json::array({out_rsq1});
  for (std::size_t i = 0; i < enhanced.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "preview_%03zu.pgm", i);
    const fs::path p = fs::path(f.out) / name;
    write_pgm(p, enhanced.frames[i]);
    outputs_json.push_back(p.string());
  }

  json metrics;
  const fs::path clean_path = fs::path(f.in).parent_path() / "clean.rsq1";
  if (fs::exists(clean_path)) {
    const RawSequence clean = load_rsq1(clean_path.string());
    const std::vector<DenseTensor> clean_packed = pack_all(clean.frames);
    metrics["enhanced_psnr_db"] = psnr(enhanced_packed, clean_packed);
    metrics["noisy_psnr_db"] = psnr(packed, clean_packed);
    if (h >= 7 && w >= 7) {
      metrics["enhanced_ssim"] = ssim_packed(enhanced_packed, clean_packed);
      metrics["noisy_ssim"] = ssim_packed(packed, clean_packed);
    }
    std::cout << "enhance: psnr " << metrics["enhanced_psnr_db"].get<double>() << " dB (noisy "
              << metrics["noisy_psnr_db"].get<double>() << " dB)\n";
  } else {
    std::cout << "enhance: no clean.rsq1 beside --in, skipping reference metrics\n";
  }

  json m = base_manifest("enhance", f);
  m["checkpoint"] = checkpoint;
  m["stride"] = f.stride;
  m["outputs"] = outputs_json;
  m["metrics"] = metrics;
  write_manifest(f.out, m);
  std::cout << "enhance: wrote " << out_rsq1 << " plus " << enhanced.frames.size()
            << " previews\n";
  return 0;
}

// ---- bench ----

json flops_json(const FlopsReport& r) {
  return {{"frames", r.frames},
          {"stride", r.stride},
          {"windows", r.windows},
          {"ops_fp", r.ops_fp},
          {"ops_bin", r.ops_bin},
          {"params_fp", r.params_fp},
          {"params_bin", r.params_bin},
          {"total_ops", r.total_ops()},
          {"ops_per_frame", r.ops_per_frame()},
          {"effective_params", r.effective_params()}};
}

int cmd_bench(const Flags& f) {
  const ModelConfig cfg = config_from(f);
  const int t = 10;
  const std::int64_t raw = 64;

  std::cout << "model: " << architecture_string(cfg) << "\n";
  const FlopsReport base = count_flops(cfg, t, raw, raw, 1);
  std::cout << "params: fp " << base.params_fp << " + bin " << base.params_bin << " (effective "
            << base.effective_params() / 1e6 << "M at bin/32)\n\n";

  std::cout << "temporal stride ablation, " << t << " frames at " << raw << "x" << raw << ":\n";
  std::cout << "  stride  windows  ops/frame      vs stride 1\n";
  json table = json::array();
  double ref_ops = 0;
  for (int s = 1; s <= 3; ++s) {
    const FlopsReport r = count_flops(cfg, t, raw, raw, s);
    if (s == 1) ref_ops = r.ops_per_frame();
    char line[128];
    std::snprintf(line, sizeof line, "  %6d  %7d  %.4e  %6.1f%%\n", s, r.windows,
                  r.ops_per_frame(), 100.0 * r.ops_per_frame() / ref_ops);
    std::cout << line;
    table.push_back(flops_json(r));
  }

  // packed bit kernel vs an equivalent dense real conv on one layer
  const std::int64_t c = cfg.base_channels, hw = 32;
  BrveModelT<float> model = init_model<float>(cfg, f.seed);
  BinConvT<float>& layer = model.u1.groups[0][0];
  CounterRng rng(f.seed, 77);
  TensorT<float> a({c, hw, hw});
  for (std::int64_t i = 0; i < a.numel(); ++i)
    a[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  FpConvT<float> dense;
  dense.w = TensorT<float>(layer.latent.shape());
  for (std::int64_t i = 0; i < dense.w.numel(); ++i)
    dense.w[i] = layer.latent[i] > 0 ? 1.0f : -1.0f;
  dense.b = TensorT<float>({c}, 0.0f);
  dense.stride = 1;
  dense.pad = 1;

  const int reps = 20;
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) (void)dabc_forward(a, layer, false);
  const auto t1 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) (void)fp_conv2d(a, dense);
  const auto t2 = std::chrono::steady_clock::now();
  const double packed_ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
  const double dense_ms = std::chrono::duration<double, std::milli>(t2 - t1).count() / reps;
  std::cout << "\nwall clock, " << c << "-channel 3x3 conv on " << hw << "x" << hw << " ("
            << reps << " reps):\n";
  std::cout << "  packed xnor-popcount  " << packed_ms << " ms\n";
  std::cout << "  dense real conv       " << dense_ms << " ms  (x"
            << dense_ms / std::max(packed_ms, 1e-9) << ")\n";

  if (!f.out.empty()) {
    ensure_out_dir(f.out);
    json m = base_manifest("bench", f);
    m["strides"] = table;
    m["wall_clock_ms"] = {{"packed", packed_ms}, {"dense", dense_ms}};
    m["outputs"] = json::array();
    write_manifest(f.out, m);
  }
  return 0;
}

// ---- gradcheck ----

int cmd_gradcheck(const Flags& f) {
  const GradCheckReport rep = run_gradcheck(f.seed, f.tolerance);
  std::cout << "gradcheck: " << rep.checked << " probes, " << rep.reseeds
            << " reseeds, max rel err " << rep.max_rel << " vs tolerance " << rep.tolerance
            << "\n";
  for (const auto& w : rep.worst)
    std::cout << "  " << w.name << "[" << w.index << "] analytic " << w.analytic << " numeric "
              << w.numeric << " rel " << w.rel << "\n";
  std::cout << (rep.pass ? "PASS" : "FAIL") << "\n";
  if (!f.out.empty()) {
    ensure_out_dir(f.out);
    json m = base_manifest("gradcheck", f);
    m["tolerance"] = f.tolerance;
    m["metrics"] = {{"checked", rep.checked},
                    {"reseeds", rep.reseeds},
                    {"max_rel", rep.max_rel},
                    {"pass", rep.pass}};
    m["outputs"] = json::array();
    write_manifest(f.out, m);
  }
  return rep.pass ? 0 : 1;
}

// ---- verify ----

// Dense +-1 convolution written directly from the definition; the check is
// only meaningful if this oracle shares nothing with the packed kernel.
TensorT<float> dense_pm1_conv(const TensorT<float>& a, const TensorT<float>& w, int stride) {
  const std::int64_t ci = a.dim(0), hp = a.dim(1), wp = a.dim(2);
  const std::int64_t co = w.dim(0), k = w.dim(2);
  const std::int64_t ho = (hp - k) / stride + 1, wo = (wp - k) / stride + 1;
  TensorT<float> out({co, ho, wo});
  for (std::int64_t o = 0; o < co; ++o)
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t x = 0; x < wo; ++x) {
        double acc = 0;
        for (std::int64_t c = 0; c < ci; ++c)
          for (std::int64_t ki = 0; ki < k; ++ki)
            for (std::int64_t kj = 0; kj < k; ++kj) {
              const float av = a(c, y * stride + ki, x * stride + kj) > 0 ? 1.0f : -1.0f;
              const float wv = w(o, c, ki, kj) > 0 ? 1.0f : -1.0f;
              acc += av * wv;
            }
        out(o, y, x) = static_cast<float>(acc);
      }
  return out;
}

int cmd_verify(const Flags& f) {
  const int cases = 1000;
  int exact = 0;
  CounterRng rng(f.seed, 1);
  for (int i = 0; i < cases; ++i) {
    const std::int64_t ci = 1 + static_cast<std::int64_t>(rng.next_u64() % 128);
    const std::int64_t co = 1 + static_cast<std::int64_t>(rng.next_u64() % 8);
    const std::int64_t k = (rng.next_u64() % 2) ? 3 : 1;
    const int stride = (rng.next_u64() % 2) ? 2 : 1;
    const std::int64_t h = k + static_cast<std::int64_t>(rng.next_u64() % 12);
    const std::int64_t w = k + static_cast<std::int64_t>(rng.next_u64() % 12);

    TensorT<float> a({ci, h, w}), wt({co, ci, k, k});
    for (std::int64_t j = 0; j < a.numel(); ++j)
      a[j] = static_cast<float>(rng.normal(0.0, 1.0));
    for (std::int64_t j = 0; j < wt.numel(); ++j)
      wt[j] = static_cast<float>(rng.normal(0.0, 1.0));

    const TensorT<float> packed =
        binary_conv2d_int<float>(pack_sign(a), pack_sign(wt), stride);
    const TensorT<float> dense = dense_pm1_conv(a, wt, stride);
    bool ok = packed.shape() == dense.shape();
    for (std::int64_t j = 0; ok && j < packed.numel(); ++j) ok = packed[j] == dense[j];
    if (ok)
      ++exact;
    else
      std::cout << "case " << i << ": MISMATCH (C=" << ci << " K=" << k << " stride=" << stride
                << ")\n";
  }
  std::cout << exact << "/" << cases << " exact\n";
  return exact == cases ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"binary raw-video enhancement pipeline"};
  app.require_subcommand(1);
  Flags f;
  std::string checkpoint;

  auto* synth = app.add_subcommand("synth", "generate a synthetic noisy/clean sequence pair");
  synth->add_option("--seed", f.seed, "generator seed");
  synth->add_option("--out", f.out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model on a synth output directory");
  train->add_option("--config", f.config, "model config file (key=value)");
  train->add_option("--seed", f.seed, "init and patch-sampling seed");
  train->add_option("--in", f.in, "directory holding noisy.rsq1 and clean.rsq1")->required();
  train->add_option("--out", f.out, "output directory")->required();
  train->add_option("--steps", f.steps, "optimizer steps; 0 saves the seeded init unchanged");
  train->add_option("--stride", f.stride, "temporal stride (1, 2 or 3)");

  auto* enhance = app.add_subcommand("enhance", "run a checkpoint over a noisy sequence");
  enhance->add_option("--config", f.config, "model config file (key=value)");
  enhance->add_option("--checkpoint", checkpoint, "checkpoint file from train")->required();
  enhance->add_option("--in", f.in, "noisy RSQ1 file")->required();
  enhance->add_option("--out", f.out, "output directory")->required();
  enhance->add_option("--stride", f.stride, "temporal stride (1, 2 or 3)");

  auto* bench = app.add_subcommand("bench", "report op counts and packed-vs-dense wall clock");
  bench->add_option("--config", f.config, "model config file (key=value)");
  bench->add_option("--seed", f.seed, "weight seed for the timing probe");
  bench->add_option("--out", f.out, "optional directory for a JSON report");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient validation");
  grad->add_option("--seed", f.seed, "probe seed");
  grad->add_option("--tolerance", f.tolerance, "max relative error accepted");
  grad->add_option("--out", f.out, "optional directory for a JSON report");

  auto* verify = app.add_subcommand("verify",
                                    "bit-exactness of the packed conv on 1000 random cases");
  verify->add_option("--seed", f.seed, "case generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(f);
    if (train->parsed()) return cmd_train(f);
    if (enhance->parsed()) return cmd_enhance(f, checkpoint);
    if (bench->parsed()) return cmd_bench(f);
    if (grad->parsed()) return cmd_gradcheck(f);
    if (verify->parsed()) return cmd_verify(f);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
