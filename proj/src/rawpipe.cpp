#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "brve/rawpipe.hpp"
#include "brve/rng.hpp"

namespace brve {

namespace {

using std::int64_t;

// substream ids for the synthetic generator
constexpr std::uint64_t kStreamBackground = 1;
constexpr std::uint64_t kStreamObjects = 2;
constexpr std::uint64_t kStreamShot = 100;  // + frame index
constexpr std::uint64_t kStreamRead = 200;  // + frame index

void require_even_frame(const DenseTensor& f, const char* who) {
  if (f.rank() != 2) throw std::invalid_argument(std::string(who) + ": expected a {H,W} frame");
  if (f.dim(0) % 2 || f.dim(1) % 2)
    throw std::invalid_argument(std::string(who) + ": dims must be even, got " +
                                std::to_string(f.dim(0)) + "x" + std::to_string(f.dim(1)));
}

// Shot noise: exact inversion-free sampling for small means, Gaussian
// approximation once the distribution is effectively normal.
int64_t poisson_draw(CounterRng& rng, double lambda) {
  if (lambda <= 0) return 0;
  if (lambda < 64.0) {
    const double limit = std::exp(-lambda);
    int64_t k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= rng.u01();
    } while (p > limit);
    return k - 1;
  }
  const double v = rng.normal(lambda, std::sqrt(lambda));
  return v <= 0 ? 0 : static_cast<int64_t>(std::llround(v));
}

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& path, const char* field) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4))
    throw std::runtime_error("RSQ1: " + path + ": truncated " + field);
  return v;
}

}  // namespace

void NoiseParams::validate() const {
  if (!(gain > 0)) throw std::invalid_argument("noise: gain must be > 0");
  if (!(sigma_read >= 0)) throw std::invalid_argument("noise: sigma_read must be >= 0");
  if (!(ratio > 0) || ratio > 1) throw std::invalid_argument("noise: ratio must lie in (0,1]");
}

void SynthParams::validate() const {
  if (t < 1) throw std::invalid_argument("synth: need at least one frame");
  if (h < 2 || w < 2 || h % 2 || w % 2)
    throw std::invalid_argument("synth: dims must be even and >= 2, got " + std::to_string(h) +
                                "x" + std::to_string(w));
  if (n_rects < 0 || n_disks < 0) throw std::invalid_argument("synth: negative object count");
  if (max_speed < 0) throw std::invalid_argument("synth: negative max_speed");
  for (const auto& g : bayer_gain)
    if (!(g > 0) || g > 1) throw std::invalid_argument("synth: bayer_gain must lie in (0,1]");
  for (const auto& o : objects) {
    if (o.size < 1) throw std::invalid_argument("synth: object size must be >= 1");
    if (!(o.value >= 0) || o.value > 1)
      throw std::invalid_argument("synth: object value must lie in [0,1]");
  }
}

DenseTensor pack_bayer(const DenseTensor& frame) {
  require_even_frame(frame, "pack_bayer");
  const int64_t h = frame.dim(0), w = frame.dim(1);
  const int64_t hh = h / 2, hw = w / 2;
  DenseTensor out({4, hh, hw});
  for (int64_t y = 0; y < hh; ++y)
    for (int64_t x = 0; x < hw; ++x) {
      out(0, y, x) = frame(2 * y, 2 * x);
      out(1, y, x) = frame(2 * y, 2 * x + 1);
      out(2, y, x) = frame(2 * y + 1, 2 * x);
      out(3, y, x) = frame(2 * y + 1, 2 * x + 1);
    }
  return out;
}

DenseTensor unpack_bayer(const DenseTensor& packed) {
  if (packed.rank() != 3 || packed.dim(0) != 4)
    throw std::invalid_argument("unpack_bayer: expected a {4,H/2,W/2} tensor");
  const int64_t hh = packed.dim(1), hw = packed.dim(2);
  DenseTensor out({2 * hh, 2 * hw});
  for (int64_t y = 0; y < hh; ++y)
    for (int64_t x = 0; x < hw; ++x) {
      out(2 * y, 2 * x) = packed(0, y, x);
      out(2 * y, 2 * x + 1) = packed(1, y, x);
      out(2 * y + 1, 2 * x) = packed(2, y, x);
      out(2 * y + 1, 2 * x + 1) = packed(3, y, x);
    }
  return out;
}

RawSequence amplify(const RawSequence& seq, double r) {
  if (!(r >= 1)) throw std::invalid_argument("amplify: ratio must be >= 1");
  RawSequence out = seq;
  out.r = 1.0;
  for (auto& f : out.frames)
    for (int64_t i = 0; i < f.numel(); ++i)
      f[i] = std::min(1.0f, static_cast<float>(f[i] * r));
  return out;
}

SynthResult synth_sequence(std::uint64_t seed, const SynthParams& p, const NoiseParams& noise) {
  p.validate();
  noise.validate();

  CounterRng bg(seed, kStreamBackground);
  const double b0 = bg.uniform(0.25, 0.45);
  const double by = bg.uniform(-0.15, 0.15);
  const double bx = bg.uniform(-0.15, 0.15);
  const double amp = bg.uniform(0.03, 0.10);
  const double fy = bg.uniform(0.5, 2.0);
  const double fx = bg.uniform(0.5, 2.0);
  const double phase = bg.u01();

  std::vector<SynthObject> objects = p.objects;
  if (objects.empty()) {
    CounterRng ob(seed, kStreamObjects);
    const int n = p.n_rects + p.n_disks;
    for (int i = 0; i < n; ++i) {
      SynthObject o;
      o.disk = i >= p.n_rects;
      o.size = std::max(2, static_cast<int>(std::lround(
                               ob.uniform(std::min(p.h, p.w) / 8.0, std::min(p.h, p.w) / 4.0))));
      o.x0 = static_cast<int>(ob.uniform(0, p.w));
      o.y0 = static_cast<int>(ob.uniform(0, p.h));
      o.vx = static_cast<int>(std::lround(ob.uniform(-p.max_speed, p.max_speed)));
      o.vy = static_cast<int>(std::lround(ob.uniform(-p.max_speed, p.max_speed)));
      o.value = ob.uniform(0.15, 0.85);
      objects.push_back(o);
    }
  }

  SynthResult out;
  out.clean.pattern = out.noisy.pattern = BayerPattern::rggb;
  out.clean.r = 1.0;
  out.noisy.r = 1.0 / noise.ratio;

  for (int f = 0; f < p.t; ++f) {
    DenseTensor clean({p.h, p.w});
    for (int64_t y = 0; y < p.h; ++y)
      for (int64_t x = 0; x < p.w; ++x) {
        double v = b0 + by * (static_cast<double>(y) / p.h) +
                   bx * (static_cast<double>(x) / p.w) +
                   amp * std::sin(6.283185307179586 *
                                  (fy * y / p.h + fx * x / p.w + phase));
        clean(y, x) = static_cast<float>(v);
      }
    for (const auto& o : objects) {
      const int cx = o.x0 + f * o.vx, cy = o.y0 + f * o.vy;
      if (o.disk) {
        const int64_t rr = static_cast<int64_t>(o.size) * o.size;
        for (int64_t y = std::max(0, cy - o.size); y <= std::min(p.h - 1, cy + o.size); ++y)
          for (int64_t x = std::max(0, cx - o.size); x <= std::min(p.w - 1, cx + o.size); ++x)
            if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= rr)
              clean(y, x) = static_cast<float>(o.value);
      } else {
        for (int64_t y = std::max(0, cy); y < std::min<int64_t>(p.h, cy + o.size); ++y)
          for (int64_t x = std::max(0, cx); x < std::min<int64_t>(p.w, cx + o.size); ++x)
            clean(y, x) = static_cast<float>(o.value);
      }
    }
    for (int64_t y = 0; y < p.h; ++y)
      for (int64_t x = 0; x < p.w; ++x) {
        const double v = std::clamp(static_cast<double>(clean(y, x)), 0.05, 0.9);
        clean(y, x) = static_cast<float>(v * p.bayer_gain[(y % 2) * 2 + (x % 2)]);
      }

    CounterRng shot(seed, kStreamShot + static_cast<std::uint64_t>(f));
    CounterRng read(seed, kStreamRead + static_cast<std::uint64_t>(f));
    DenseTensor noisy({p.h, p.w});
    for (int64_t i = 0; i < clean.numel(); ++i) {
      const double lambda = static_cast<double>(clean[i]) * noise.ratio * noise.gain;
      double v = static_cast<double>(poisson_draw(shot, lambda)) / noise.gain;
      if (noise.sigma_read > 0) v += read.normal(0.0, noise.sigma_read);
      noisy[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    out.clean.frames.push_back(std::move(clean));
    out.noisy.frames.push_back(std::move(noisy));
  }
  return out;
}

double psnr(const DenseTensor& a, const DenseTensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("psnr: shape mismatch");
  if (a.numel() == 0) throw std::invalid_argument("psnr: empty input");
  double mse = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double psnr(const std::vector<DenseTensor>& a, const std::vector<DenseTensor>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("psnr: sequences must be nonempty and equally long");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += psnr(a[i], b[i]);
  return acc / static_cast<double>(a.size());
}

double ssim_packed(const DenseTensor& a, const DenseTensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("ssim: shape mismatch");
  if (a.rank() != 3 || a.dim(0) != 4)
    throw std::invalid_argument("ssim: expected a packed {4,h,w} pair");
  const int64_t h = a.dim(1), w = a.dim(2), win = 7;
  if (h < win || w < win)
    throw std::invalid_argument("ssim: packed dims must be >= 7, got " + std::to_string(h) + "x" +
                                std::to_string(w));
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const double inv_n = 1.0 / static_cast<double>(win * win);
  double total = 0;
  for (int64_t ch = 0; ch < 4; ++ch) {
    double acc = 0;
    for (int64_t y = 0; y + win <= h; ++y)
      for (int64_t x = 0; x + win <= w; ++x) {
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        for (int64_t i = 0; i < win; ++i)
          for (int64_t j = 0; j < win; ++j) {
            const double u = a(ch, y + i, x + j);
            const double v = b(ch, y + i, x + j);
            sx += u;
            sy += v;
            sxx += u * u;
            syy += v * v;
            sxy += u * v;
          }
        const double mx = sx * inv_n, my = sy * inv_n;
        const double vx = sxx * inv_n - mx * mx;
        const double vy = syy * inv_n - my * my;
        const double cxy = sxy * inv_n - mx * my;
        acc += ((2 * mx * my + c1) * (2 * cxy + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    total += acc / static_cast<double>((h - win + 1) * (w - win + 1));
  }
  return total / 4.0;
}

double ssim_packed(const std::vector<DenseTensor>& a, const std::vector<DenseTensor>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("ssim: sequences must be nonempty and equally long");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += ssim_packed(a[i], b[i]);
  return acc / static_cast<double>(a.size());
}

void save_rsq1(const std::string& path, const RawSequence& seq) {
  if (seq.frames.empty()) throw std::invalid_argument("RSQ1: " + path + ": no frames to save");
  const int64_t h = seq.frames[0].dim(0), w = seq.frames[0].dim(1);
  for (const auto& f : seq.frames) {
    require_even_frame(f, "RSQ1");
    if (f.dim(0) != h || f.dim(1) != w)
      throw std::invalid_argument("RSQ1: " + path + ": frames disagree on dims");
    for (int64_t i = 0; i < f.numel(); ++i)
      if (!(f[i] >= 0.0f && f[i] <= 1.0f))
        throw std::invalid_argument("RSQ1: " + path +
                                    ": values must lie in [0,1] (normalize before saving)");
  }
  if (!(seq.r >= 1)) throw std::invalid_argument("RSQ1: " + path + ": r must be >= 1");

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("RSQ1: cannot open " + path + " for writing");
  os.write("RSQ1", 4);
  put_u32(os, static_cast<std::uint32_t>(seq.frames.size()));
  put_u32(os, static_cast<std::uint32_t>(h));
  put_u32(os, static_cast<std::uint32_t>(w));
  os.put(static_cast<char>(seq.pattern));
  put_u32(os, seq.black_level);
  put_u32(os, seq.white_level);
  os.write(reinterpret_cast<const char*>(&seq.r), 8);
  for (const auto& f : seq.frames) write_dtn1(os, f);
  if (!os) throw std::runtime_error("RSQ1: write to " + path + " failed");
}

RawSequence load_rsq1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("RSQ1: cannot open " + path);
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, "RSQ1", 4) != 0)
    throw std::runtime_error("RSQ1: " + path + ": bad magic, expected \"RSQ1\"");
  const std::uint32_t t = get_u32(is, path, "frame count");
  const std::uint32_t h = get_u32(is, path, "height");
  const std::uint32_t w = get_u32(is, path, "width");
  if (t == 0) throw std::runtime_error("RSQ1: " + path + ": zero frames");
  if (h == 0 || w == 0 || h % 2 || w % 2)
    throw std::runtime_error("RSQ1: " + path + ": dims must be even and nonzero, got " +
                             std::to_string(h) + "x" + std::to_string(w));
  const int pattern = is.get();
  if (pattern == std::char_traits<char>::eof())
    throw std::runtime_error("RSQ1: " + path + ": truncated pattern");
  if (pattern > 3)
    throw std::runtime_error("RSQ1: " + path + ": unknown pattern tag " + std::to_string(pattern));

  RawSequence seq;
  seq.pattern = static_cast<BayerPattern>(pattern);
  seq.black_level = get_u32(is, path, "black level");
  seq.white_level = get_u32(is, path, "white level");
  if (!is.read(reinterpret_cast<char*>(&seq.r), 8))
    throw std::runtime_error("RSQ1: " + path + ": truncated amplification ratio");
  if (!(seq.r >= 1)) throw std::runtime_error("RSQ1: " + path + ": r must be >= 1");
  for (std::uint32_t i = 0; i < t; ++i) {
    DenseTensor f = read_dtn1<float>(is);
    if (f.rank() != 2 || f.dim(0) != h || f.dim(1) != w)
      throw std::runtime_error("RSQ1: " + path + ": frame " + std::to_string(i) +
                               " does not match the header dims");
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

}  // namespace brve
