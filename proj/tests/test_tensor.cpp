#include <doctest.h>

#include <random>
#include <sstream>

#include "brve/rng.hpp"
#include "brve/tensor.hpp"
#include "reference.hpp"

using brve::BitTensor;
using brve::DenseTensor;
using brve::TensorT;

namespace {

DenseTensor random_pm1(std::vector<std::int64_t> shape, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::bernoulli_distribution coin(0.5);
  DenseTensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = coin(eng) ? 1.0f : -1.0f;
  return t;
}

}  // namespace

TEST_CASE("sign convention: zero binarizes to -1") {
  CHECK_FALSE(brve::sign_bit(0.0f));
  CHECK_FALSE(brve::sign_bit(-0.25f));
  CHECK(brve::sign_bit(1e-30f));
}

TEST_CASE("pack/unpack round trip across ranks") {
  const std::uint64_t seed = brve::substream(7, 0);
  for (const auto& shape : {std::vector<std::int64_t>{130}, {5, 9}, {17, 6, 7}, {3, 65, 3, 3}}) {
    const DenseTensor t = random_pm1(shape, seed + shape.size());
    const BitTensor b = brve::pack_bits(t);
    const DenseTensor back = brve::unpack_bits<float>(b);
    REQUIRE(back.shape() == t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) REQUIRE(back[i] == t[i]);
  }
}

TEST_CASE("pack rejects values outside {-1,+1} naming the flat index") {
  DenseTensor t({4}, 1.0f);
  t[2] = 0.5f;
  CHECK_THROWS_WITH_AS(brve::pack_bits(t), doctest::Contains("flat index 2"),
                       std::invalid_argument);
}

TEST_CASE("padding lanes hold bit 1 and all -1 input packs valid lanes to 0") {
  DenseTensor t({3}, -1.0f);
  const BitTensor b = brve::pack_bits(t);
  REQUIRE(b.words_per_row() == 1);
  // bits 0..2 are -1 (0), bits 3..63 are padding (1)
  CHECK(b.row(0)[0] == (~std::uint64_t(0)) << 3);
}

TEST_CASE("signed_dot frozen example") {
  // a = (+1,-1,+1), b = (+1,+1,-1): one matching lane -> 2*1 - 3 = -1
  const DenseTensor a = DenseTensor::from_data({3}, {1.0f, -1.0f, 1.0f});
  const DenseTensor b = DenseTensor::from_data({3}, {1.0f, 1.0f, -1.0f});
  CHECK(brve::signed_dot(brve::pack_bits(a), 0, brve::pack_bits(b), 0) == -1);
}

TEST_CASE("signed_dot equals the dense +-1 dot over random lane counts") {
  std::mt19937_64 eng(brve::substream(11, 1));
  std::uniform_int_distribution<std::int64_t> lanes_dist(1, 256);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::int64_t lanes = lanes_dist(eng);
    const DenseTensor a = random_pm1({lanes}, eng());
    const DenseTensor b = random_pm1({lanes}, eng());
    std::int64_t want = 0;
    for (std::int64_t i = 0; i < lanes; ++i)
      want += static_cast<std::int64_t>(a[i]) * static_cast<std::int64_t>(b[i]);
    CHECK(brve::signed_dot(brve::pack_bits(a), 0, brve::pack_bits(b), 0) == want);
  }
}

TEST_CASE("signed_dot rejects mismatched lane counts") {
  const BitTensor a = brve::pack_bits(random_pm1({8}, 1));
  const BitTensor b = brve::pack_bits(random_pm1({9}, 2));
  CHECK_THROWS_AS((void)brve::signed_dot(a, 0, b, 0), std::invalid_argument);
}

TEST_CASE("channel_stats matches the two-pass oracle") {
  std::mt19937_64 eng(brve::substream(13, 2));
  std::normal_distribution<float> dist(0.1f, 1.3f);
  DenseTensor t({6, 5, 9});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(eng);
  const auto got = brve::channel_stats(t);
  const auto want = ref::stats(t);
  for (std::size_t c = 0; c < 6; ++c) {
    CHECK(got.mean.v[c] == doctest::Approx(want.mean[c]).epsilon(1e-6));
    CHECK(got.mean_abs.v[c] == doctest::Approx(want.mean_abs[c]).epsilon(1e-6));
    CHECK(got.stddev.v[c] == doctest::Approx(want.stddev[c]).epsilon(1e-6));
    // mean_abs dominates |mean| for any distribution
    CHECK(got.mean_abs.v[c] >= std::abs(got.mean.v[c]) - 1e-7f);
  }
}

TEST_CASE("channel_stats: constant channels have zero std, single elements too") {
  DenseTensor t({2, 1, 1});
  t[0] = 0.75f;
  t[1] = -2.0f;
  const auto s = brve::channel_stats(t);
  CHECK(s.stddev.v[0] == 0.0f);
  CHECK(s.stddev.v[1] == 0.0f);
  CHECK(s.mean.v[1] == -2.0f);
  CHECK(s.mean_abs.v[1] == 2.0f);

  DenseTensor flat({3, 4, 4}, 0.5f);
  const auto sf = brve::channel_stats(flat);
  for (float v : sf.stddev.v) CHECK(v == 0.0f);
}

TEST_CASE("DTN1 round trip preserves bits for f32 and f64") {
  std::mt19937_64 eng(brve::substream(17, 3));
  std::normal_distribution<double> dist;
  TensorT<double> d({3, 4});
  for (std::int64_t i = 0; i < d.numel(); ++i) d[i] = dist(eng);
  DenseTensor f({2, 3, 2});
  for (std::int64_t i = 0; i < f.numel(); ++i) f[i] = static_cast<float>(dist(eng));

  std::stringstream ss;
  brve::write_dtn1(ss, d);
  brve::write_dtn1(ss, f);
  const TensorT<double> d2 = brve::read_dtn1<double>(ss);
  const DenseTensor f2 = brve::read_dtn1<float>(ss);
  REQUIRE(d2.shape() == d.shape());
  REQUIRE(f2.shape() == f.shape());
  for (std::int64_t i = 0; i < d.numel(); ++i) CHECK(d2[i] == d[i]);
  for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(f2[i] == f[i]);
}

TEST_CASE("DTN1 rejects malformed streams naming the field") {
  const DenseTensor t({2, 2}, 1.0f);
  std::stringstream good;
  brve::write_dtn1(good, t);
  const std::string payload = good.str();

  {
    std::stringstream ss("XTN1 garbage");
    CHECK_THROWS_WITH_AS(brve::read_dtn1<float>(ss), doctest::Contains("magic"),
                         std::runtime_error);
  }
  {
    std::string bad = payload;
    bad[8] = 0;  // zero out dim 0 (little-endian u32 at offset 8)
    bad[9] = 0;
    bad[10] = 0;
    bad[11] = 0;
    std::stringstream ss(bad);
    CHECK_THROWS_WITH_AS(brve::read_dtn1<float>(ss), doctest::Contains("dim 0"),
                         std::runtime_error);
  }
  {
    std::stringstream ss(payload);
    CHECK_THROWS_WITH_AS(brve::read_dtn1<double>(ss), doctest::Contains("dtype mismatch"),
                         std::runtime_error);
  }
  {
    std::stringstream ss(payload.substr(0, payload.size() - 4));
    CHECK_THROWS_WITH_AS(brve::read_dtn1<float>(ss), doctest::Contains("truncated payload"),
                         std::runtime_error);
  }
}

TEST_CASE("tensor shape validation") {
  CHECK_THROWS_AS(DenseTensor({3, 0, 2}), std::invalid_argument);
  CHECK_THROWS_AS(DenseTensor::from_data({2, 2}, {1.0f, 2.0f}), std::invalid_argument);
}
