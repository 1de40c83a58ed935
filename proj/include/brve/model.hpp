#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "brve/binkernels.hpp"
#include "brve/shift.hpp"

namespace brve {

struct ModelConfig {
  int levels = 3;
  int base_channels = 64;
  int blocks_per_level = 2;
  int daca_k = 3;
  bool daca_enabled = true;
  int window = 3;   // temporal slots per shift window; the shift algebra is 3-cyclic
  int stride = 1;   // temporal stride: 1, 2 or 3
  int in_channels = 4;
  int out_channels = 4;

  void validate() const;
};

// ---- parameter containers ----

// Plain U-Net over {C,H,W} features: 2L+1 groups of width-preserving binary
// conv blocks in processing order (encoder levels, bottleneck, decoder levels
// deepest first), mean pooling between encoder groups, bilinear upsampling
// plus additive skips between decoder groups.
template <typename T>
struct UnetT {
  std::vector<std::vector<BinConvT<T>>> groups;  // size 2L+1

  int levels() const { return (static_cast<int>(groups.size()) - 1) / 2; }
};

// One shift-U-Net group: every group re-expands its 3-frame window to 3C/2
// channels via the spatial-temporal shift, so it opens with a fusion block
// back to C before the width-preserving blocks.
template <typename T>
struct ShiftGroupT {
  FusionT<T> fuse;                  // 3C/2 -> C
  std::vector<BinConvT<T>> blocks;  // width-preserving, no gate re-use needed
};

// Shift U-Net over a 3-slot window; parameters are shared across the slots
// and the shift direction alternates with the group index (even groups cycle
// forward, odd groups backward).
template <typename T>
struct ShiftUnetT {
  std::vector<ShiftGroupT<T>> groups;  // size 2L+1, processing order

  int levels() const { return (static_cast<int>(groups.size()) - 1) / 2; }
};

// Three-stage recurrent enhancement model over packed raw frames.
template <typename T>
struct BrveModelT {
  ModelConfig cfg;
  FpConvT<T> stem;   // in_channels -> C, 3x3, pad 1
  UnetT<T> u1;       // stage 1: per-frame features
  ShiftUnetT<T> u2;  // stage 2: windowed spatial-temporal aggregation
  FusionT<T> fuse3;  // 2C -> C merge of stage-1 and stage-2 features
  UnetT<T> u3;       // stage 3: reconstruction
  FpConvT<T> last;   // C -> out_channels, 3x3, pad 1
};

using BrveModel = BrveModelT<float>;

template <typename T>
BrveModelT<T> init_model(const ModelConfig& cfg, std::uint64_t seed);

// Visits every learnable tensor in the fixed canonical order used by the
// optimizer state and the checkpoint payload. Names are stable and unique;
// gate parameters carry a "daca" suffix so they can be frozen selectively.
template <typename T>
void visit_params(BrveModelT<T>& m,
                  const std::function<void(const std::string&, TensorT<T>&)>& fn);

// Visits every binary conv (block convs and fusion convs) in canonical order.
template <typename T>
void visit_binconvs(BrveModelT<T>& m, const std::function<void(BinConvT<T>&)>& fn);

// Recomputes the packed weight bits and scales after parameter changes.
template <typename T>
void refresh_derived(BrveModelT<T>& m) {
  visit_binconvs<T>(m, [](BinConvT<T>& c) { update_derived(c); });
}

// ---- recurrent schedule ----

// Where a window slot's content comes from.
struct SlotSrc {
  enum class Kind { zero, stage1, win_out };
  Kind kind = Kind::zero;
  int frame = -1;  // stage1: frame index
  int win = -1;    // win_out: producing window
  int slot = -1;   // win_out: output slot of that window
};

struct WindowPlan {
  std::array<SlotSrc, 3> slots;
  std::array<int, 3> emit;  // output frame fed by each window output, -1 = none
};

// Slot routing and output routing for a whole sequence. Every input frame is
// emitted exactly once; warm-up outputs that would land before the first
// frame are dropped and the final window flushes the remaining slots.
struct SchedulePlan {
  int t = 0;
  int stride = 1;
  std::vector<WindowPlan> windows;
};

SchedulePlan plan_schedule(int t, int stride);

// ---- forward traces ----

template <typename T>
struct UnetTrace {
  std::vector<std::vector<BlockTrace<T>>> groups;
};

template <typename T>
struct ShiftGroupTrace {
  std::array<FusionTrace<T>, 3> fuse;
  std::array<std::vector<BlockTrace<T>>, 3> blocks;
};

template <typename T>
struct ShiftUnetTrace {
  std::vector<ShiftGroupTrace<T>> groups;
};

template <typename T>
struct FrameTrace {
  TensorT<T> stem_in;
  UnetTrace<T> u1;
};

template <typename T>
struct WindowTrace {
  ShiftUnetTrace<T> u2;
};

template <typename T>
struct OutTrace {
  int frame = -1;
  int win = -1;
  int slot = -1;
  FusionTrace<T> fuse3;
  UnetTrace<T> u3;
  TensorT<T> last_in;
};

template <typename T>
struct BrveTrace {
  SchedulePlan plan;
  std::vector<FrameTrace<T>> frames;
  std::vector<WindowTrace<T>> windows;
  std::vector<OutTrace<T>> outs;  // in emit order
};

// ---- forward passes ----

template <typename T>
TensorT<T> unet_forward(const TensorT<T>& x, const UnetT<T>& u, bool daca_on,
                        UnetTrace<T>* trace = nullptr);

template <typename T>
std::array<TensorT<T>, 3> shift_unet_forward(const std::array<TensorT<T>, 3>& window,
                                             const ShiftUnetT<T>& u, bool daca_on,
                                             ShiftUnetTrace<T>* trace = nullptr);

// Runs the full three-stage model over a packed sequence (each frame
// {in_channels,H,W} with H,W divisible by 2^levels) and returns one output
// frame per input frame.
template <typename T>
std::vector<TensorT<T>> brve_forward(const BrveModelT<T>& m,
                                     const std::vector<TensorT<T>>& frames, int stride,
                                     BrveTrace<T>* trace = nullptr);

// ---- cost model ----

struct FlopsReport {
  int frames = 0;
  int stride = 1;
  int windows = 0;
  double ops_fp = 0;   // real multiply-accumulates and elementwise ops
  double ops_bin = 0;  // single-bit multiply-accumulates
  std::int64_t params_fp = 0;
  std::int64_t params_bin = 0;

  // 64 binary MACs cost one real operation; 32 binary weights cost one real
  // parameter.
  double total_ops() const { return ops_fp + ops_bin / 64.0; }
  double ops_per_frame() const { return frames > 0 ? total_ops() / frames : 0.0; }
  double effective_params() const {
    return static_cast<double>(params_fp) + static_cast<double>(params_bin) / 32.0;
  }
};

// dense conv multiply-accumulate count
inline double conv_macs(double co, double ci, double k, double ho, double wo) {
  return co * ho * wo * ci * k * k;
}

// Analytic per-sequence cost for raw input of raw_h x raw_w (packed
// internally to half resolution) over t frames at the given temporal stride.
FlopsReport count_flops(const ModelConfig& cfg, int t, std::int64_t raw_h, std::int64_t raw_w,
                        int stride);

}  // namespace brve
