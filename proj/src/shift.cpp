#include "brve/shift.hpp"

namespace brve {

const ShiftKernel& default_shift_kernel() {
  static const ShiftKernel k = [] {
    ShiftKernel sk;
    constexpr int steps[5] = {-8, -4, 0, 4, 8};
    for (int dy : steps)
      for (int dx : steps)
        if (dx != 0 || dy != 0) sk.offsets.push_back({dx, dy});
    return sk;
  }();
  return k;
}

namespace detail {

std::vector<std::int64_t> shift_slices(std::int64_t channels, std::int64_t parts, bool strict) {
  if (parts <= 0) throw std::invalid_argument("spatial_shift: empty shift kernel");
  if (strict && channels % parts != 0)
    throw std::invalid_argument("spatial_shift: channel count " + std::to_string(channels) +
                                " not divisible by " + std::to_string(parts));
  const std::int64_t base = channels / parts;
  const std::int64_t extra = channels % parts;
  std::vector<std::int64_t> bounds(static_cast<std::size_t>(parts) + 1, 0);
  for (std::int64_t j = 0; j < parts; ++j)
    bounds[static_cast<std::size_t>(j) + 1] =
        bounds[static_cast<std::size_t>(j)] + base + (j < extra ? 1 : 0);
  return bounds;
}

}  // namespace detail

}  // namespace brve
