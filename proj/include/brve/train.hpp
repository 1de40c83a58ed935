#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "brve/model.hpp"

namespace brve {

// Gradients use the same container as the parameters; derived bit state in a
// gradient container is meaningless and ignored.
template <typename T>
BrveModelT<T> zeros_like(const BrveModelT<T>& m) {
  BrveModelT<T> g = m;
  visit_params<T>(g, [](const std::string&, TensorT<T>& t) {
    std::fill(t.data(), t.data() + t.numel(), T(0));
  });
  return g;
}

// ---- losses ----

// mean over every element of sqrt(diff^2 + eps^2)
template <typename T>
double charbonnier(const std::vector<TensorT<T>>& pred, const std::vector<TensorT<T>>& target,
                   double eps);

template <typename T>
std::vector<TensorT<T>> charbonnier_backward(const std::vector<TensorT<T>>& pred,
                                             const std::vector<TensorT<T>>& target, double eps);

// ---- backward passes ----
// Each takes the adjoint of its output, the forward trace, and accumulates
// parameter gradients into the mirror container; the return value is the
// adjoint of the input.
//
// Non-smooth stages use their training surrogates rather than the (zero
// almost everywhere) true derivatives: both binarizations pass gradients
// straight through inside |x| <= 1 and block them outside, and the weight
// scale S is treated as a constant of the step.

template <typename T>
TensorT<T> rprelu_backward(const TensorT<T>& g, const TensorT<T>& y, const RPReluT<T>& p,
                           RPReluT<T>& gp);

template <typename T>
TensorT<T> fp_conv2d_backward(const TensorT<T>& g, const TensorT<T>& input, const FpConvT<T>& conv,
                              FpConvT<T>& gconv);

template <typename T>
TensorT<T> dabc_backward(const TensorT<T>& g, const DabcTrace<T>& tr, const BinConvT<T>& layer,
                         BinConvT<T>& glayer);

template <typename T>
TensorT<T> block_backward(const TensorT<T>& g, const BlockTrace<T>& tr, const BinConvT<T>& layer,
                          BinConvT<T>& glayer);

template <typename T>
TensorT<T> fusion_backward(const TensorT<T>& g, const FusionTrace<T>& tr, const FusionT<T>& f,
                           FusionT<T>& gf);

template <typename T>
TensorT<T> avg_pool2_backward(const TensorT<T>& g);

template <typename T>
TensorT<T> bilinear_up2_backward(const TensorT<T>& g);

template <typename T>
std::array<TensorT<T>, 3> st_shift_window_adjoint(const std::array<TensorT<T>, 3>& gout,
                                                  ShiftDir dir,
                                                  const ShiftKernel& kernel = default_shift_kernel());

template <typename T>
TensorT<T> unet_backward(const TensorT<T>& g, const UnetT<T>& u, const UnetTrace<T>& tr,
                         UnetT<T>& gu);

template <typename T>
std::array<TensorT<T>, 3> shift_unet_backward(const std::array<TensorT<T>, 3>& g,
                                              const ShiftUnetT<T>& u, const ShiftUnetTrace<T>& tr,
                                              ShiftUnetT<T>& gu);

// Accumulates dL/dparams for the whole model given per-frame output adjoints.
template <typename T>
void brve_backward(const std::vector<TensorT<T>>& gout, const BrveModelT<T>& m,
                   const BrveTrace<T>& tr, BrveModelT<T>& grads);

// ---- optimization ----

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  explicit AdamState(const AdamConfig& cfg = {}) : cfg_(cfg) {}

  // Applies one update. `trainable` may exclude parameters by name (their
  // moments stay untouched so a later unfreeze resumes cleanly).
  void step(BrveModelT<float>& params, BrveModelT<float>& grads, double lr,
            const std::function<bool(const std::string&)>& trainable = nullptr);

  std::int64_t steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

inline double cosine_lr(double base, int step, int total_steps) {
  if (total_steps <= 0) return base;
  const double x = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * base * (1.0 + std::cos(3.14159265358979323846 * x));
}

struct TrainOptions {
  int steps = 200;
  double base_lr = 2e-4;
  double charbonnier_eps = 1e-3;
  int stride = 1;
  bool train_daca = true;
  std::string log_csv;  // empty = no file log
};

struct StepLog {
  int step = 0;
  double lr = 0;
  double loss = 0;
};

// Supplies the packed (amplified noisy, clean) pair for one step.
using BatchFn =
    std::function<void(int step, std::vector<DenseTensor>& noisy, std::vector<DenseTensor>& clean)>;

// Full training loop: forward with trace, Charbonnier loss, backward, Adam
// with cosine decay, derived-state refresh after every update. Throws if the
// loss stops being finite.
std::vector<StepLog> train_loop(BrveModelT<float>& m, const BatchFn& batch,
                                const TrainOptions& opt);

// ---- finite-difference validation ----

struct GradCheckIssue {
  std::string name;
  std::int64_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel = 0;
};

struct GradCheckReport {
  int checked = 0;
  int reseeds = 0;
  double max_rel = 0;
  bool pass = false;
  double tolerance = 0;
  double margin = 0;  // enforced distance between probe points and breakpoints
  std::vector<GradCheckIssue> worst;  // sorted by rel, at most 8
};

// Central-difference check of every smooth parameter group on a small
// double-precision model, probing at least `margin` away from the binarization
// and activation breakpoints (probes are reconstructed or reseeded otherwise).
// Surrogate-gradient parameters (latent weights, thresholds) cannot be
// certified by differences; they are compared against an independent naive
// re-derivation of the documented surrogate formulas instead.
GradCheckReport run_gradcheck(std::uint64_t seed, double tolerance, double margin = 0.05);

}  // namespace brve
