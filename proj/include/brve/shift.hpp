#pragma once

#include <array>

#include "brve/tensor.hpp"

namespace brve {

enum class ShiftDir { forward, backward };

// Fixed spatial shift pattern: the 5x5 offset grid over {-8,-4,0,4,8} in
// both axes minus the null offset, row-major (dy outer, dx inner), 24 total.
// Positive dx moves content rightward, positive dy moves it downward:
// out(y, x) = in(y - dy, x - dx), zero where the source falls outside.
struct ShiftKernel {
  struct Offset {
    int dx;
    int dy;
  };
  std::vector<Offset> offsets;
};

const ShiftKernel& default_shift_kernel();

// Splits {C,H,W} into retained and shifted halves along channels (C even).
template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_half(const TensorT<T>& x);

template <typename T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& parts);

// Cyclic rotation of the temporal window: forward (A,B,C) -> (C,A,B),
// backward (A,B,C) -> (B,C,A). forward(backward(w)) == w and forward^3 == id.
template <typename T>
std::array<TensorT<T>, 3> cyclic_temporal_shift(const std::array<TensorT<T>, 3>& w, ShiftDir dir);

// Per-slice spatial translation with zero fill. Channels are split into
// |kernel| consecutive slices, slice j translated by offsets[j]. The strict
// form requires C divisible by |kernel|.
template <typename T>
TensorT<T> spatial_shift(const TensorT<T>& s, const ShiftKernel& kernel);

// Relaxed slicing used inside the shift U-Net: slice sizes floor(C/|K|)
// with the remainder distributed one channel per slice from the first slice
// onward (slices may be empty when C < |K|).
template <typename T>
TensorT<T> spatial_shift_sliced(const TensorT<T>& s, const ShiftKernel& kernel);

// Adjoint of spatial_shift_sliced: the same slicing with negated offsets.
template <typename T>
TensorT<T> spatial_shift_adjoint(const TensorT<T>& g, const ShiftKernel& kernel);

// Spatial-temporal shift of a 3-frame window of {C,H,W} features: split
// halves, cycle the shift halves temporally, spatially shift the cycled
// halves, then per frame concatenate (retained | spatially-shifted |
// temporally-shifted) into {3C/2,H,W}.
template <typename T>
std::array<TensorT<T>, 3> st_shift_window(const std::array<TensorT<T>, 3>& window, ShiftDir dir,
                                          const ShiftKernel& kernel = default_shift_kernel());

// ---- template definitions ----

template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_half(const TensorT<T>& x) {
  if (x.rank() != 3) throw std::invalid_argument("split_half: expected {C,H,W}");
  const std::int64_t c = x.dim(0);
  if (c % 2) throw std::invalid_argument("split_half: channel count must be even, got " +
                                         std::to_string(c));
  const std::int64_t h = x.dim(1), w = x.dim(2), n = h * w, half = c / 2;
  TensorT<T> a({half, h, w}), b({half, h, w});
  std::memcpy(a.data(), x.data(), sizeof(T) * static_cast<std::size_t>(half * n));
  std::memcpy(b.data(), x.data() + half * n, sizeof(T) * static_cast<std::size_t>(half * n));
  return {std::move(a), std::move(b)};
}

template <typename T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const std::int64_t h = parts[0]->dim(1), w = parts[0]->dim(2);
  std::int64_t c = 0;
  for (const auto* p : parts) {
    if (p->rank() != 3 || p->dim(1) != h || p->dim(2) != w)
      throw std::invalid_argument("concat_channels: spatial shapes disagree");
    c += p->dim(0);
  }
  TensorT<T> out({c, h, w});
  T* dst = out.data();
  for (const auto* p : parts) {
    std::memcpy(dst, p->data(), sizeof(T) * static_cast<std::size_t>(p->numel()));
    dst += p->numel();
  }
  return out;
}

template <typename T>
std::array<TensorT<T>, 3> cyclic_temporal_shift(const std::array<TensorT<T>, 3>& w,
                                                ShiftDir dir) {
  if (!w[0].same_shape(w[1]) || !w[0].same_shape(w[2]))
    throw std::invalid_argument("cyclic_temporal_shift: window shapes disagree");
  if (dir == ShiftDir::forward) return {w[2], w[0], w[1]};
  return {w[1], w[2], w[0]};
}

namespace detail {

// Slice boundaries for the relaxed rule; strict mode additionally demands an
// exact split.
std::vector<std::int64_t> shift_slices(std::int64_t channels, std::int64_t parts, bool strict);

template <typename T>
TensorT<T> shift_by_slices(const TensorT<T>& s, const ShiftKernel& kernel, bool strict,
                           bool negate) {
  if (s.rank() != 3) throw std::invalid_argument("spatial_shift: expected {C,H,W}");
  const std::int64_t c = s.dim(0), h = s.dim(1), w = s.dim(2);
  const auto bounds = shift_slices(c, static_cast<std::int64_t>(kernel.offsets.size()), strict);
  TensorT<T> out(s.shape(), T(0));
  for (std::size_t j = 0; j < kernel.offsets.size(); ++j) {
    const int dx = negate ? -kernel.offsets[j].dx : kernel.offsets[j].dx;
    const int dy = negate ? -kernel.offsets[j].dy : kernel.offsets[j].dy;
    for (std::int64_t ch = bounds[j]; ch < bounds[j + 1]; ++ch) {
      const std::int64_t y0 = std::max<std::int64_t>(0, dy);
      const std::int64_t y1 = std::min<std::int64_t>(h, h + dy);
      const std::int64_t x0 = std::max<std::int64_t>(0, dx);
      const std::int64_t x1 = std::min<std::int64_t>(w, w + dx);
      for (std::int64_t y = y0; y < y1; ++y) {
        if (x1 > x0)
          std::memcpy(out.data() + (ch * h + y) * w + x0,
                      s.data() + (ch * h + y - dy) * w + x0 - dx,
                      sizeof(T) * static_cast<std::size_t>(x1 - x0));
      }
    }
  }
  return out;
}

}  // namespace detail

template <typename T>
TensorT<T> spatial_shift(const TensorT<T>& s, const ShiftKernel& kernel) {
  return detail::shift_by_slices(s, kernel, /*strict=*/true, /*negate=*/false);
}

template <typename T>
TensorT<T> spatial_shift_sliced(const TensorT<T>& s, const ShiftKernel& kernel) {
  return detail::shift_by_slices(s, kernel, /*strict=*/false, /*negate=*/false);
}

template <typename T>
TensorT<T> spatial_shift_adjoint(const TensorT<T>& g, const ShiftKernel& kernel) {
  return detail::shift_by_slices(g, kernel, /*strict=*/false, /*negate=*/true);
}

template <typename T>
std::array<TensorT<T>, 3> st_shift_window(const std::array<TensorT<T>, 3>& window, ShiftDir dir,
                                          const ShiftKernel& kernel) {
  std::array<TensorT<T>, 3> keep, sh;
  for (int i = 0; i < 3; ++i) {
    auto [f, s] = split_half(window[static_cast<std::size_t>(i)]);
    keep[static_cast<std::size_t>(i)] = std::move(f);
    sh[static_cast<std::size_t>(i)] = std::move(s);
  }
  const std::array<TensorT<T>, 3> cycled = cyclic_temporal_shift(sh, dir);
  std::array<TensorT<T>, 3> out;
  for (int i = 0; i < 3; ++i) {
    const TensorT<T> spatial = spatial_shift_sliced(cycled[static_cast<std::size_t>(i)], kernel);
    out[static_cast<std::size_t>(i)] =
        concat_channels<T>({&keep[static_cast<std::size_t>(i)], &spatial,
                            &cycled[static_cast<std::size_t>(i)]});
  }
  return out;
}

}  // namespace brve
