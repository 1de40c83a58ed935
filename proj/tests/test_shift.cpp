#include <doctest.h>

#include <random>

#include "brve/rng.hpp"
#include "brve/shift.hpp"
#include "reference.hpp"

using brve::DenseTensor;
using brve::ShiftDir;
using brve::ShiftKernel;

namespace {

DenseTensor random_int_tensor(std::vector<std::int64_t> shape, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_int_distribution<int> dist(-8, 8);
  DenseTensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(dist(eng));
  return t;
}

bool equal(const DenseTensor& a, const DenseTensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

ShiftKernel zero_kernel() {
  ShiftKernel k;
  for (int i = 0; i < 24; ++i) k.offsets.push_back({0, 0});
  return k;
}

}  // namespace

TEST_CASE("default shift kernel: 24 offsets on the +-8 grid minus the origin") {
  const ShiftKernel& k = brve::default_shift_kernel();
  REQUIRE(k.offsets.size() == 24);
  for (const auto& o : k.offsets) {
    CHECK((o.dx % 4 == 0 && o.dx >= -8 && o.dx <= 8));
    CHECK((o.dy % 4 == 0 && o.dy >= -8 && o.dy <= 8));
    CHECK((o.dx != 0 || o.dy != 0));
  }
  // row-major over dy then dx
  CHECK(k.offsets[0].dx == -8);
  CHECK(k.offsets[0].dy == -8);
  CHECK(k.offsets[23].dx == 8);
  CHECK(k.offsets[23].dy == 8);
}

TEST_CASE("temporal cycle: forward then backward is identity, forward^3 is identity") {
  std::mt19937_64 eng(brve::substream(23, 0));
  for (int trial = 0; trial < 200; ++trial) {
    std::array<DenseTensor, 3> w = {random_int_tensor({4, 5, 6}, eng()),
                                    random_int_tensor({4, 5, 6}, eng()),
                                    random_int_tensor({4, 5, 6}, eng())};
    const auto fb = brve::cyclic_temporal_shift(
        brve::cyclic_temporal_shift(w, ShiftDir::forward), ShiftDir::backward);
    const auto f3 = brve::cyclic_temporal_shift(
        brve::cyclic_temporal_shift(brve::cyclic_temporal_shift(w, ShiftDir::forward),
                                    ShiftDir::forward),
        ShiftDir::forward);
    for (int i = 0; i < 3; ++i) {
      CHECK(equal(fb[static_cast<std::size_t>(i)], w[static_cast<std::size_t>(i)]));
      CHECK(equal(f3[static_cast<std::size_t>(i)], w[static_cast<std::size_t>(i)]));
    }
  }
  // forward moves the last frame to the front: (A,B,C) -> (C,A,B)
  std::array<DenseTensor, 3> w = {DenseTensor({1, 1, 1}, 1.0f), DenseTensor({1, 1, 1}, 2.0f),
                                  DenseTensor({1, 1, 1}, 3.0f)};
  const auto f = brve::cyclic_temporal_shift(w, ShiftDir::forward);
  CHECK(f[0][0] == 3.0f);
  CHECK(f[1][0] == 1.0f);
  CHECK(f[2][0] == 2.0f);
  const auto b = brve::cyclic_temporal_shift(w, ShiftDir::backward);
  CHECK(b[0][0] == 2.0f);
  CHECK(b[1][0] == 3.0f);
  CHECK(b[2][0] == 1.0f);
}

TEST_CASE("spatial shift translates each slice by its offset with zero fill") {
  const ShiftKernel& k = brve::default_shift_kernel();
  const DenseTensor x = random_int_tensor({24, 20, 20}, brve::substream(23, 1));
  const DenseTensor y = brve::spatial_shift(x, k);
  for (std::int64_t c = 0; c < 24; ++c) {
    // single-channel slices: channel c uses offset c
    DenseTensor xc({1, 20, 20});
    std::memcpy(xc.data(), x.data() + c * 400, 400 * sizeof(float));
    const DenseTensor want =
        ref::translate(xc, k.offsets[static_cast<std::size_t>(c)].dx,
                       k.offsets[static_cast<std::size_t>(c)].dy);
    for (std::int64_t i = 0; i < 400; ++i) CHECK(y[c * 400 + i] == want[i]);
  }
}

TEST_CASE("strict spatial shift rejects non-divisible channel counts") {
  const DenseTensor x({25, 10, 10}, 1.0f);
  CHECK_THROWS_AS(brve::spatial_shift(x, brve::default_shift_kernel()), std::invalid_argument);
  // the relaxed slicing spreads the remainder from the first slice onward
  const DenseTensor y = brve::spatial_shift_sliced(x, brve::default_shift_kernel());
  CHECK(y.shape() == x.shape());
}

TEST_CASE("relaxed slicing handles C < 24 by leaving trailing slices empty") {
  const DenseTensor x = random_int_tensor({4, 12, 12}, brve::substream(23, 2));
  const ShiftKernel& k = brve::default_shift_kernel();
  const DenseTensor y = brve::spatial_shift_sliced(x, k);
  for (std::int64_t c = 0; c < 4; ++c) {
    DenseTensor xc({1, 12, 12});
    std::memcpy(xc.data(), x.data() + c * 144, 144 * sizeof(float));
    const DenseTensor want =
        ref::translate(xc, k.offsets[static_cast<std::size_t>(c)].dx,
                       k.offsets[static_cast<std::size_t>(c)].dy);
    for (std::int64_t i = 0; i < 144; ++i) CHECK(y[c * 144 + i] == want[i]);
  }
}

TEST_CASE("spatial shift adjoint: <g, Sx> == <S'g, x> exactly on integer tensors") {
  std::mt19937_64 eng(brve::substream(23, 3));
  for (int trial = 0; trial < 200; ++trial) {
    const DenseTensor x = random_int_tensor({26, 14, 14}, eng());
    const DenseTensor g = random_int_tensor({26, 14, 14}, eng());
    const DenseTensor sx = brve::spatial_shift_sliced(x, brve::default_shift_kernel());
    const DenseTensor sg = brve::spatial_shift_adjoint(g, brve::default_shift_kernel());
    double lhs = 0, rhs = 0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      lhs += static_cast<double>(g[i]) * static_cast<double>(sx[i]);
      rhs += static_cast<double>(sg[i]) * static_cast<double>(x[i]);
    }
    CHECK(lhs == rhs);
  }
}

TEST_CASE("st_shift_window fuses to 3C/2 channels in (kept|spatial|temporal) order") {
  std::mt19937_64 eng(brve::substream(23, 4));
  const std::int64_t c = 16, h = 10, w = 10, half = c / 2, n = h * w;
  std::array<DenseTensor, 3> win = {random_int_tensor({c, h, w}, eng()),
                                    random_int_tensor({c, h, w}, eng()),
                                    random_int_tensor({c, h, w}, eng())};
  const auto out = brve::st_shift_window(win, ShiftDir::forward, zero_kernel());
  for (int i = 0; i < 3; ++i) {
    REQUIRE(out[static_cast<std::size_t>(i)].dim(0) == 3 * c / 2);
    REQUIRE(out[static_cast<std::size_t>(i)].dim(1) == h);
  }
  // with a zero spatial kernel the shifted copy equals the cycled half, so
  // frame i must be (keep_i | cycle_i | cycle_i); forward cycle = (s3,s1,s2)
  const int cycle_src[3] = {2, 0, 1};
  for (int i = 0; i < 3; ++i) {
    const DenseTensor& o = out[static_cast<std::size_t>(i)];
    const DenseTensor& self = win[static_cast<std::size_t>(i)];
    const DenseTensor& src = win[static_cast<std::size_t>(cycle_src[i])];
    for (std::int64_t j = 0; j < half * n; ++j) {
      CHECK(o[j] == self[j]);                         // kept half
      CHECK(o[half * n + j] == src[half * n + j]);    // spatially shifted copy
      CHECK(o[2 * half * n + j] == src[half * n + j]);  // temporally shifted half
    }
  }
}

TEST_CASE("split_half rejects odd channel counts") {
  const DenseTensor x({5, 4, 4}, 1.0f);
  CHECK_THROWS_AS(brve::split_half(x), std::invalid_argument);
}
