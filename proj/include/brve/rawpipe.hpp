#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brve/tensor.hpp"

namespace brve {

// 2x2 color-filter layout tag. Recorded and round-tripped; the pipeline is
// raw-to-raw, so no demosaicing ever interprets it.
enum class BayerPattern : std::uint8_t { rggb = 0, bggr = 1, grbg = 2, gbrg = 3 };

// Bayer-mosaic frame stack, black/white-level normalized to [0,1].
struct RawSequence {
  std::vector<DenseTensor> frames;  // each {H,W}, H and W even
  BayerPattern pattern = BayerPattern::rggb;
  std::uint32_t black_level = 64;
  std::uint32_t white_level = 1023;
  double r = 1.0;  // amplification ratio still to apply, >= 1
};

// Heteroscedastic sensor model: photon shot noise at the given gain plus
// Gaussian read noise, applied to an exposure darkened by `ratio`.
struct NoiseParams {
  double gain = 200.0;        // photons per unit signal, > 0
  double sigma_read = 0.005;  // read-noise stddev, >= 0
  double ratio = 0.1;         // exposure ratio in (0,1]; amplification r = 1/ratio

  void validate() const;
};

// One moving scene element. Rectangles span [x0, x0+size) x [y0, y0+size);
// disks cover points within `size` of (x0, y0). Both translate by (vx, vy)
// raw pixels per frame, clipped at the frame border.
struct SynthObject {
  bool disk = false;
  int x0 = 0, y0 = 0;
  int size = 4;
  int vx = 0, vy = 0;
  double value = 0.6;
};

struct SynthParams {
  int t = 10;
  int h = 64, w = 64;  // raw (mosaic) dims, even
  int n_rects = 2;     // drawn from the seed when `objects` is empty
  int n_disks = 2;
  int max_speed = 2;                          // per-frame translation bound
  std::vector<SynthObject> objects;           // explicit layout overrides the draw
  double bayer_gain[4] = {0.9, 1.0, 1.0, 0.8};  // per-cell (TL,TR,BL,BR) response

  void validate() const;
};

struct SynthResult {
  RawSequence noisy;  // r = 1/ratio
  RawSequence clean;  // r = 1
};

// Packs each 2x2 mosaic cell into four channels at half resolution, channel
// order (top-left, top-right, bottom-left, bottom-right).
DenseTensor pack_bayer(const DenseTensor& frame);
DenseTensor unpack_bayer(const DenseTensor& packed);

// Multiplies every value by r (>= 1) and clips to [0,1]. The result carries
// r = 1: the amplification has been consumed.
RawSequence amplify(const RawSequence& seq, double r);

// Procedural clean scene (smooth gradient plus moving shapes, mosaicked with
// the per-cell Bayer gains) and its darkened noisy capture:
// noisy = clip(Poisson(clean * ratio * gain) / gain + N(0, sigma_read), 0, 1).
// Deterministic in the seed; every stage draws from its own substream, so the
// clean scene is unaffected by the noise parameters.
SynthResult synth_sequence(std::uint64_t seed, const SynthParams& p, const NoiseParams& noise);

// 10*log10(1 / MSE) over the [0,1] data range; +infinity when MSE = 0.
// The sequence form is the mean over per-frame values.
double psnr(const DenseTensor& a, const DenseTensor& b);
double psnr(const std::vector<DenseTensor>& a, const std::vector<DenseTensor>& b);

// Mean SSIM over all valid 7x7 uniform windows of a packed {4,h,w} pair,
// averaged over the four channels; K1 = 0.01, K2 = 0.03, data range 1.
// Requires h, w >= 7. The sequence form is the mean over per-frame values.
double ssim_packed(const DenseTensor& a, const DenseTensor& b);
double ssim_packed(const std::vector<DenseTensor>& a, const std::vector<DenseTensor>& b);

// Sequence container "RSQ1": magic, u32 T/H/W, u8 pattern, u32 black/white
// levels, f64 r, then T single-frame {H,W} f32 tensor payloads.
void save_rsq1(const std::string& path, const RawSequence& seq);
RawSequence load_rsq1(const std::string& path);

}  // namespace brve
