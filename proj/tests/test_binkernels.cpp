#include <doctest.h>

#include <random>

#include "brve/binkernels.hpp"
#include "brve/rng.hpp"
#include "reference.hpp"

using brve::BinConvT;
using brve::DenseTensor;
using brve::FpConvT;
using brve::FusionT;
using brve::RPReluT;
using brve::TensorT;

namespace {

DenseTensor random_normal(std::vector<std::int64_t> shape, std::uint64_t seed, float sd = 1.0f,
                          float mean = 0.0f) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<float> dist(mean, sd);
  DenseTensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(eng);
  return t;
}

DenseTensor random_pm1(std::vector<std::int64_t> shape, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::bernoulli_distribution coin(0.5);
  DenseTensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = coin(eng) ? 1.0f : -1.0f;
  return t;
}

BinConvT<float> make_layer(std::int64_t co, std::int64_t ci, int k, std::uint64_t seed,
                           bool with_daca, int daca_k = 3) {
  BinConvT<float> l;
  l.latent = random_normal({co, ci, k, k}, seed, 0.4f);
  l.alpha = DenseTensor({ci}, 0.0f);
  l.act.gamma = DenseTensor({co}, 0.0f);
  l.act.zeta = DenseTensor({co}, 0.0f);
  l.act.beta = DenseTensor({co}, 0.25f);
  l.has_daca = with_daca;
  if (with_daca) {
    l.daca.kernel = DenseTensor({3, daca_k}, 0.0f);
    l.daca.bias = DenseTensor({1}, 0.0f);
  }
  brve::update_derived(l);
  return l;
}

}  // namespace

TEST_CASE("binarize_weights: scale follows the L1 law and signs follow the bits") {
  const DenseTensor latent = random_normal({5, 7, 3, 3}, brve::substream(31, 0), 0.7f);
  auto [bits, scale] = brve::binarize_weights(latent);
  const std::int64_t fan = 7 * 3 * 3;
  for (std::int64_t o = 0; o < 5; ++o) {
    double l1 = 0;
    for (std::int64_t i = 0; i < fan; ++i) l1 += std::fabs(latent[o * fan + i]);
    CHECK(scale[static_cast<std::size_t>(o)] ==
          doctest::Approx(l1 / fan).epsilon(1e-6));
  }
  const DenseTensor dense = brve::unpack_bits<float>(bits);
  for (std::int64_t i = 0; i < latent.numel(); ++i)
    CHECK(dense[i] == (latent[i] > 0 ? 1.0f : -1.0f));
}

TEST_CASE("binarize_weights: zero latent gives zero scale and all -1 bits") {
  const DenseTensor latent({2, 3, 3, 3}, 0.0f);
  auto [bits, scale] = brve::binarize_weights(latent);
  CHECK(scale[0] == 0.0f);
  CHECK(scale[1] == 0.0f);
  const DenseTensor dense = brve::unpack_bits<float>(bits);
  for (std::int64_t i = 0; i < dense.numel(); ++i) CHECK(dense[i] == -1.0f);
}

TEST_CASE("binarize_weights rejects non-finite latents") {
  DenseTensor latent({1, 1, 1, 1}, 0.5f);
  latent[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(brve::binarize_weights(latent), std::invalid_argument);
}

TEST_CASE("rsign: threshold boundary binarizes to -1") {
  DenseTensor a({2, 1, 2});
  a[0] = 0.5f;   // == alpha -> -1
  a[1] = 0.51f;  // > alpha -> +1
  a[2] = -1.0f;
  a[3] = 2.0f;
  DenseTensor alpha = DenseTensor::from_data({2}, {0.5f, 1.0f});
  auto [bits, shifted] = brve::rsign(a, alpha);
  CHECK_FALSE(bits.bit(0, 0));
  CHECK(bits.bit(1, 0));
  CHECK_FALSE(bits.bit(0, 1));
  CHECK(bits.bit(1, 1));
  CHECK(shifted[0] == 0.0f);
  CHECK(shifted[3] == 1.0f);
}

TEST_CASE("binary_conv2d matches the dense +-1 oracle across shapes and strides") {
  std::mt19937_64 eng(brve::substream(31, 1));
  const std::int64_t channels[] = {1, 3, 63, 64, 65, 128};
  for (const std::int64_t c : channels)
    for (const int k : {1, 3})
      for (const int stride : {1, 2}) {
        const std::int64_t h = k + 5, w = k + 6;
        const DenseTensor a = random_pm1({c, h, w}, eng());
        const DenseTensor wt = random_pm1({4, c, k, k}, eng());
        const DenseTensor got =
            brve::binary_conv2d_int<float>(brve::pack_bits(a), brve::pack_bits(wt), stride);
        const DenseTensor want = ref::conv2d_pm1(a, wt, stride);
        REQUIRE(got.shape() == want.shape());
        for (std::int64_t i = 0; i < got.numel(); ++i) REQUIRE(got[i] == want[i]);
        // integer outputs bounded by the reduction size
        for (std::int64_t i = 0; i < got.numel(); ++i)
          REQUIRE(std::fabs(got[i]) <= static_cast<float>(c * k * k));
      }
}

TEST_CASE("binary_conv2d rejections") {
  const DenseTensor a = random_pm1({4, 3, 3}, 1);
  const DenseTensor w5 = random_pm1({2, 4, 5, 5}, 2);
  CHECK_THROWS_WITH_AS(
      (void)brve::binary_conv2d_int<float>(brve::pack_bits(a), brve::pack_bits(w5), 1),
      doctest::Contains("larger than"), std::invalid_argument);
  const DenseTensor wbad = random_pm1({2, 5, 3, 3}, 3);
  CHECK_THROWS_WITH_AS(
      (void)brve::binary_conv2d_int<float>(brve::pack_bits(a), brve::pack_bits(wbad), 1),
      doctest::Contains("channel counts"), std::invalid_argument);
}

TEST_CASE("daca matches an independent composition of stats, conv and logistic") {
  const DenseTensor aprime = random_normal({10, 6, 6}, brve::substream(31, 2), 1.1f, 0.2f);
  brve::DacaParamsT<float> p;
  p.kernel = random_normal({3, 3}, brve::substream(31, 3), 0.8f);
  p.bias = DenseTensor({1}, 0.3f);
  const std::vector<float> got = brve::daca(aprime, p);
  const std::vector<double> want = ref::daca_compose(aprime, p.kernel, 0.3);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-5));
    CHECK(got[i] > 0.0f);
    CHECK(got[i] < 1.0f);
  }
}

TEST_CASE("daca: zero kernel and bias gives exactly 0.5 everywhere") {
  const DenseTensor aprime = random_normal({6, 4, 4}, brve::substream(31, 4));
  brve::DacaParamsT<float> p;
  p.kernel = DenseTensor({3, 3}, 0.0f);
  p.bias = DenseTensor({1}, 0.0f);
  for (const float v : brve::daca(aprime, p)) CHECK(v == 0.5f);
}

TEST_CASE("daca: large bias saturates high but stays inside the open interval") {
  const DenseTensor aprime = random_normal({6, 4, 4}, brve::substream(31, 5));
  brve::DacaParamsT<float> p;
  p.kernel = DenseTensor({3, 3}, 0.0f);
  p.bias = DenseTensor({1}, 10.0f);
  for (const float v : brve::daca(aprime, p)) {
    CHECK(v > 0.9999f);
    CHECK(v < 1.0f);
  }
  p.bias[0] = 1000.0f;
  for (const float v : brve::daca(aprime, p)) CHECK(v < 1.0f);
  p.bias[0] = -1000.0f;
  for (const float v : brve::daca(aprime, p)) CHECK(v > 0.0f);
}

TEST_CASE("dabc equals the staged composition computed independently") {
  BinConvT<float> l = make_layer(8, 8, 3, brve::substream(31, 6), true);
  l.alpha = random_normal({8}, brve::substream(31, 7), 0.2f);
  l.daca.kernel = random_normal({3, 3}, brve::substream(31, 8), 0.5f);
  l.daca.bias[0] = 0.1f;
  brve::update_derived(l);
  const DenseTensor a = random_normal({8, 6, 6}, brve::substream(31, 9));

  const DenseTensor got = brve::dabc_forward(a, l, true);

  // stage 1: binarized conv on the padded, shifted input via the dense oracle
  const DenseTensor ap = brve::pad_spatial(a, 1);
  DenseTensor apm1(ap.shape()), aprime({8, 6, 6});
  for (std::int64_t c = 0; c < 8; ++c)
    for (std::int64_t y = 0; y < 8; ++y)
      for (std::int64_t x = 0; x < 8; ++x) {
        const float v = ap(c, y, x) - l.alpha[c];
        apm1(c, y, x) = v > 0 ? 1.0f : -1.0f;
        if (y >= 1 && y < 7 && x >= 1 && x < 7) aprime(c, y - 1, x - 1) = v;
      }
  DenseTensor wpm1(l.latent.shape());
  for (std::int64_t i = 0; i < wpm1.numel(); ++i) wpm1[i] = l.latent[i] > 0 ? 1.0f : -1.0f;
  const DenseTensor ints = ref::conv2d_pm1(apm1, wpm1, 1);
  // stages 2+3: per-channel scale and gate (gate checked against its own
  // oracle elsewhere)
  const std::vector<float> gate = brve::daca(aprime, l.daca);
  REQUIRE(got.shape() == ints.shape());
  for (std::int64_t o = 0; o < 8; ++o) {
    const float f = l.scale[static_cast<std::size_t>(o)] * gate[static_cast<std::size_t>(o)];
    for (std::int64_t i = 0; i < 36; ++i) REQUIRE(got[o * 36 + i] == ints[o * 36 + i] * f);
  }
}

TEST_CASE("dabc with unit scales and no gate equals the raw bit conv") {
  BinConvT<float> l = make_layer(6, 6, 3, brve::substream(31, 10), false);
  for (std::int64_t i = 0; i < l.latent.numel(); ++i)
    l.latent[i] = l.latent[i] > 0 ? 1.0f : -1.0f;  // |w| = 1 so S = 1 exactly
  brve::update_derived(l);
  const DenseTensor a = random_normal({6, 5, 5}, brve::substream(31, 11));
  const DenseTensor got = brve::dabc_forward(a, l, true);  // daca off at the layer
  auto [abits, ashift] = brve::rsign(brve::pad_spatial(a, 1), l.alpha);
  const DenseTensor want = brve::binary_conv2d_int<float>(abits, l.wbits, 1);
  for (std::int64_t i = 0; i < got.numel(); ++i) CHECK(got[i] == want[i]);
}

TEST_CASE("threshold covariance: shifting input and alpha together is a no-op") {
  BinConvT<float> l = make_layer(6, 6, 3, brve::substream(31, 12), false);
  l.alpha = random_normal({6}, brve::substream(31, 13), 0.05f, 0.45f);  // stays positive
  brve::update_derived(l);
  const DenseTensor a = random_normal({6, 6, 6}, brve::substream(31, 14));
  const float c = 0.2f;  // alpha + c keeps every pad pixel on the -1 side
  DenseTensor a2(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) a2[i] = a[i] + c;
  BinConvT<float> l2 = l;
  for (std::int64_t i = 0; i < 6; ++i) l2.alpha[i] += c;
  const DenseTensor y = brve::dabc_forward(a, l, false);
  const DenseTensor y2 = brve::dabc_forward(a2, l2, false);
  for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == y2[i]);
}

TEST_CASE("rprelu: boundary takes the leaky branch; neutral parameters pass through") {
  RPReluT<float> p;
  p.gamma = DenseTensor::from_data({1}, {0.3f});
  p.zeta = DenseTensor::from_data({1}, {0.2f});
  p.beta = DenseTensor::from_data({1}, {0.25f});
  DenseTensor y({1, 1, 3});
  y[0] = 0.2f;   // == zeta
  y[1] = 1.0f;   // above
  y[2] = -1.0f;  // below
  const DenseTensor out = brve::rprelu(y, p);
  CHECK(out[0] == doctest::Approx(0.25f * (0.2f - 0.3f) + 0.2f));
  CHECK(out[1] == doctest::Approx(1.0f - 0.3f + 0.2f));
  CHECK(out[2] == doctest::Approx(0.25f * (-1.0f - 0.3f) + 0.2f));

  RPReluT<float> neutral;
  neutral.gamma = DenseTensor({1}, 0.0f);
  neutral.zeta = DenseTensor({1}, 0.0f);
  neutral.beta = DenseTensor({1}, 1.0f);
  const DenseTensor id = brve::rprelu(y, neutral);
  for (int i = 0; i < 3; ++i) CHECK(id[i] == y[i]);
}

TEST_CASE("binary_conv_block: zero weights with neutral activation is the identity") {
  BinConvT<float> l = make_layer(6, 6, 3, brve::substream(31, 15), true);
  for (std::int64_t i = 0; i < l.latent.numel(); ++i) l.latent[i] = 0.0f;
  l.act.beta = DenseTensor({6}, 1.0f);
  brve::update_derived(l);
  const DenseTensor a = random_normal({6, 4, 4}, brve::substream(31, 16));
  const DenseTensor out = brve::binary_conv_block(a, l, true);
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(out[i] == a[i]);
}

TEST_CASE("binary_conv_block rejects width changes and strides") {
  BinConvT<float> l = make_layer(8, 4, 3, brve::substream(31, 17), false);
  const DenseTensor a = random_normal({4, 4, 4}, brve::substream(31, 18));
  CHECK_THROWS_WITH_AS((void)brve::binary_conv_block(a, l, false),
                       doctest::Contains("fusion"), std::invalid_argument);
  BinConvT<float> l2 = make_layer(4, 4, 3, brve::substream(31, 19), false);
  l2.stride = 2;
  brve::update_derived(l2);
  CHECK_THROWS_AS((void)brve::binary_conv_block(a, l2, false), std::invalid_argument);
}

TEST_CASE("fp_conv2d matches the dense oracle") {
  std::mt19937_64 eng(brve::substream(31, 20));
  for (const int k : {1, 3})
    for (const int stride : {1, 2})
      for (const int pad : {0, 1}) {
        const DenseTensor a = random_normal({5, 7, 8}, eng());
        FpConvT<float> conv;
        conv.w = random_normal({3, 5, k, k}, eng(), 0.5f);
        conv.b = random_normal({3}, eng(), 0.1f);
        conv.stride = stride;
        conv.pad = pad;
        const DenseTensor got = brve::fp_conv2d(a, conv);
        const DenseTensor want = ref::conv2d_fp(a, conv.w, conv.b, stride, pad);
        REQUIRE(got.shape() == want.shape());
        for (std::int64_t i = 0; i < got.numel(); ++i)
          CHECK(got[i] == doctest::Approx(want[i]).epsilon(2e-4));
      }
}

TEST_CASE("fusion block: zero binary weights reduce it to the projection") {
  FusionT<float> f;
  f.conv = make_layer(4, 6, 3, brve::substream(31, 21), false);
  for (std::int64_t i = 0; i < f.conv.latent.numel(); ++i) f.conv.latent[i] = 0.0f;
  brve::update_derived(f.conv);
  f.proj.w = random_normal({4, 6, 1, 1}, brve::substream(31, 22), 0.5f);
  f.proj.b = random_normal({4}, brve::substream(31, 23), 0.1f);
  const DenseTensor a = random_normal({6, 5, 5}, brve::substream(31, 24));
  const DenseTensor out = brve::binary_fusion_block(a, f);
  const DenseTensor proj = brve::fp_conv2d(a, f.proj);
  for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == proj[i]);
}

TEST_CASE("fusion block: zero projection leaves the binary path alone") {
  FusionT<float> f;
  f.conv = make_layer(4, 6, 3, brve::substream(31, 25), false);
  f.proj.w = DenseTensor({4, 6, 1, 1}, 0.0f);
  f.proj.b = DenseTensor({4}, 0.0f);
  const DenseTensor a = random_normal({6, 5, 5}, brve::substream(31, 26));
  const DenseTensor out = brve::binary_fusion_block(a, f);
  const DenseTensor want = brve::rprelu(brve::dabc_forward(a, f.conv, false), f.conv.act);
  for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == want[i]);
}

TEST_CASE("avg_pool2: 2x2 means, odd dims rejected") {
  DenseTensor a = DenseTensor::from_data({1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  const DenseTensor p = brve::avg_pool2(a);
  REQUIRE(p.shape() == std::vector<std::int64_t>{1, 1, 2});
  CHECK(p[0] == doctest::Approx((1 + 2 + 5 + 6) / 4.0f));
  CHECK(p[1] == doctest::Approx((3 + 4 + 7 + 8) / 4.0f));
  CHECK_THROWS_AS(brve::avg_pool2(DenseTensor({1, 3, 4}, 1.0f)), std::invalid_argument);
}

TEST_CASE("bilinear_up2 preserves constants and inverts through pooling on them") {
  const DenseTensor c({3, 4, 6}, 0.625f);
  const DenseTensor up = brve::bilinear_up2(c);
  REQUIRE(up.shape() == std::vector<std::int64_t>{3, 8, 12});
  for (std::int64_t i = 0; i < up.numel(); ++i) CHECK(up[i] == 0.625f);
  const DenseTensor back = brve::avg_pool2(up);
  for (std::int64_t i = 0; i < back.numel(); ++i) CHECK(back[i] == 0.625f);
}

TEST_CASE("bilinear_up2 interpolates with half-pixel alignment and clamped edges") {
  const DenseTensor a = DenseTensor::from_data({1, 1, 3}, {0.0f, 4.0f, 8.0f});
  const DenseTensor up = brve::bilinear_up2(a);
  // sample positions -0.25, 0.25, 0.75, ... with edge clamping
  REQUIRE(up.shape() == std::vector<std::int64_t>{1, 2, 6});
  CHECK(up(0, 0, 0) == doctest::Approx(0.0f));
  CHECK(up(0, 0, 1) == doctest::Approx(1.0f));
  CHECK(up(0, 0, 2) == doctest::Approx(3.0f));
  CHECK(up(0, 0, 3) == doctest::Approx(5.0f));
  CHECK(up(0, 0, 4) == doctest::Approx(7.0f));
  CHECK(up(0, 0, 5) == doctest::Approx(8.0f));
}

TEST_CASE("pad_spatial zero-fills the border and copies the interior") {
  const DenseTensor a = random_normal({2, 3, 3}, brve::substream(31, 27));
  const DenseTensor p = brve::pad_spatial(a, 2);
  REQUIRE(p.shape() == std::vector<std::int64_t>{2, 7, 7});
  for (std::int64_t c = 0; c < 2; ++c)
    for (std::int64_t y = 0; y < 7; ++y)
      for (std::int64_t x = 0; x < 7; ++x) {
        const bool border = y < 2 || y >= 5 || x < 2 || x >= 5;
        if (border)
          CHECK(p(c, y, x) == 0.0f);
        else
          CHECK(p(c, y, x) == a(c, y - 2, x - 2));
      }
}
