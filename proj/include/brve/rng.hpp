#pragma once

#include <cmath>
#include <cstdint>

namespace brve {

// splitmix64 finalizer; the basis of all seed derivation.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Substream rule: every stochastic stage owns a fixed stream id and seeds
// its engine with substream(seed, id[, index]). Streams are independent of
// one another, so adding a stage never perturbs existing draws.
inline std::uint64_t substream(std::uint64_t seed, std::uint64_t stream) {
  return mix64(seed ^ mix64(stream));
}

inline std::uint64_t substream(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return mix64(substream(seed, stream) ^ mix64(index + 0x51ED270B9A6F2D4Cull));
}

// Counter-based generator over one substream. Every draw hashes (seed,
// stream, counter), so results are identical on every platform and never
// depend on standard-library distribution internals.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  std::uint64_t next_u64() { return substream(seed_, stream_, ctr_++); }

  // uniform in [0, 1) with 53 random bits
  double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  double normal(double mean, double sd) {
    const double u1 = u01();
    const double u2 = u01();
    return mean + sd * std::sqrt(-2.0 * std::log1p(-u1)) *
                      std::cos(6.283185307179586476925287 * u2);
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t ctr_ = 0;
};

}  // namespace brve
