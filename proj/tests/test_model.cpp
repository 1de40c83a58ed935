#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "brve/checkpoint.hpp"
#include "brve/config.hpp"
#include "brve/model.hpp"
#include "brve/rng.hpp"

using brve::BrveModelT;
using brve::DenseTensor;
using brve::ModelConfig;
using brve::SlotSrc;

namespace {

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 8;
  cfg.blocks_per_level = 1;
  cfg.daca_k = 3;
  cfg.daca_enabled = true;
  return cfg;
}

std::vector<DenseTensor> random_frames(int t, std::int64_t c, std::int64_t h, std::int64_t w,
                                       std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<DenseTensor> out;
  for (int i = 0; i < t; ++i) {
    DenseTensor f({c, h, w});
    for (std::int64_t j = 0; j < f.numel(); ++j) f[j] = dist(eng);
    out.push_back(std::move(f));
  }
  return out;
}

struct ParamCounts {
  std::int64_t fp = 0, bin = 0, tensors = 0;
};

ParamCounts walk_counts(BrveModelT<float>& m) {
  ParamCounts pc;
  brve::visit_params<float>(m, [&](const std::string& name, DenseTensor& t) {
    ++pc.tensors;
    if (name.size() >= 7 && name.rfind(".latent") == name.size() - 7)
      pc.bin += t.numel();
    else
      pc.fp += t.numel();
  });
  return pc;
}

}  // namespace

TEST_CASE("schedule emits every frame exactly once with the expected window counts") {
  for (int t = 1; t <= 7; ++t)
    for (int stride = 1; stride <= 3; ++stride) {
      const brve::SchedulePlan plan = brve::plan_schedule(t, stride);
      const int expect_windows = stride == 1 ? t : (t + stride - 1) / stride;
      REQUIRE(static_cast<int>(plan.windows.size()) == expect_windows);
      std::multiset<int> emitted;
      for (std::size_t w = 0; w < plan.windows.size(); ++w) {
        const auto& wp = plan.windows[w];
        for (int s = 0; s < 3; ++s) {
          const SlotSrc& src = wp.slots[static_cast<std::size_t>(s)];
          if (src.kind == SlotSrc::Kind::stage1) {
            REQUIRE(src.frame >= 0);
            REQUIRE(src.frame < t);
          } else if (src.kind == SlotSrc::Kind::win_out) {
            REQUIRE(src.win >= 0);
            REQUIRE(src.win < static_cast<int>(w));  // only earlier windows
            REQUIRE(src.slot >= 0);
            REQUIRE(src.slot < 3);
          }
          const int f = wp.emit[static_cast<std::size_t>(s)];
          if (f >= 0) emitted.insert(f);
        }
      }
      REQUIRE(emitted.size() == static_cast<std::size_t>(t));
      for (int f = 0; f < t; ++f) REQUIRE(emitted.count(f) == 1);
    }
}

TEST_CASE("schedule: stride 1 feeds the current frame into the newest slot") {
  const brve::SchedulePlan plan = brve::plan_schedule(5, 1);
  for (int k = 0; k < 5; ++k) {
    const auto& wp = plan.windows[static_cast<std::size_t>(k)];
    REQUIRE(wp.slots[2].kind == SlotSrc::Kind::stage1);
    REQUIRE(wp.slots[2].frame == k);
    if (k > 0) {
      REQUIRE(wp.slots[0].kind == SlotSrc::Kind::win_out);
      REQUIRE(wp.slots[0].win == k - 1);
      REQUIRE(wp.slots[0].slot == 1);
      REQUIRE(wp.slots[1].slot == 2);
    }
  }
}

TEST_CASE("schedule: stride 3 windows touch only their own triple") {
  const brve::SchedulePlan plan = brve::plan_schedule(7, 3);
  REQUIRE(plan.windows.size() == 3);
  for (std::size_t w = 0; w < plan.windows.size(); ++w)
    for (const SlotSrc& s : plan.windows[w].slots) {
      REQUIRE(s.kind != SlotSrc::Kind::win_out);
      if (s.kind == SlotSrc::Kind::stage1) {
        REQUIRE(s.frame >= static_cast<int>(w) * 3);
        REQUIRE(s.frame < static_cast<int>(w) * 3 + 3);
      }
    }
  CHECK(plan.windows[2].slots[1].kind == SlotSrc::Kind::zero);
  CHECK(plan.windows[2].slots[2].kind == SlotSrc::Kind::zero);
}

TEST_CASE("schedule rejects bad arguments") {
  CHECK_THROWS_AS(brve::plan_schedule(0, 1), std::invalid_argument);
  CHECK_THROWS_AS(brve::plan_schedule(3, 4), std::invalid_argument);
}

TEST_CASE("init_model is reproducible and seed-sensitive") {
  const ModelConfig cfg = toy_config();
  auto a = brve::init_model<float>(cfg, 123);
  auto b = brve::init_model<float>(cfg, 123);
  auto c = brve::init_model<float>(cfg, 124);
  std::vector<float> va, vb, vc;
  brve::visit_params<float>(a, [&](const std::string&, DenseTensor& t) {
    va.insert(va.end(), t.data(), t.data() + t.numel());
  });
  brve::visit_params<float>(b, [&](const std::string&, DenseTensor& t) {
    vb.insert(vb.end(), t.data(), t.data() + t.numel());
  });
  brve::visit_params<float>(c, [&](const std::string&, DenseTensor& t) {
    vc.insert(vc.end(), t.data(), t.data() + t.numel());
  });
  REQUIRE(va.size() == vb.size());
  CHECK(std::memcmp(va.data(), vb.data(), va.size() * sizeof(float)) == 0);
  REQUIRE(va.size() == vc.size());
  CHECK(std::memcmp(va.data(), vc.data(), va.size() * sizeof(float)) != 0);
}

TEST_CASE("visit_params: canonical order is stable with unique names") {
  const ModelConfig cfg = toy_config();
  auto m = brve::init_model<float>(cfg, 5);
  std::vector<std::string> names;
  brve::visit_params<float>(m, [&](const std::string& n, DenseTensor&) { names.push_back(n); });
  // 2 stem + 5 groups x 7 + 5 x (7 fuse + 7 block) + 7 fuse3 + 35 + 2 last
  CHECK(names.size() == 151);
  CHECK(names.front() == "stem.w");
  CHECK(names.back() == "last.b");
  CHECK(names[2] == "u1.g0.b0.latent");
  const std::set<std::string> uniq(names.begin(), names.end());
  CHECK(uniq.size() == names.size());
  // gate parameters are the only ones carrying a daca prefix in the leaf name
  int daca = 0;
  for (const auto& n : names)
    if (n.find("daca") != std::string::npos) ++daca;
  // gated blocks live in all three U-Nets, two gate tensors each
  CHECK(daca == 3 * 2 * (2 * cfg.levels + 1) * cfg.blocks_per_level);
}

TEST_CASE("unet_forward: identity blocks reduce the net to upsample(pool(x)) + x") {
  brve::UnetT<float> u;
  u.groups.resize(3);  // one level
  for (auto& g : u.groups) {
    g.resize(1);
    auto& b = g[0];
    b.latent = DenseTensor({6, 6, 3, 3}, 0.0f);
    b.alpha = DenseTensor({6}, 0.0f);
    b.act.gamma = DenseTensor({6}, 0.0f);
    b.act.zeta = DenseTensor({6}, 0.0f);
    b.act.beta = DenseTensor({6}, 1.0f);
    brve::update_derived(b);
  }
  std::mt19937_64 eng(99);
  std::normal_distribution<float> dist;
  DenseTensor x({6, 8, 10});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = dist(eng);
  const DenseTensor got = brve::unet_forward(x, u, true);
  const DenseTensor up = brve::bilinear_up2(brve::avg_pool2(x));
  for (std::int64_t i = 0; i < x.numel(); ++i)
    CHECK(got[i] == doctest::Approx(up[i] + x[i]).epsilon(1e-6));
}

TEST_CASE("unet_forward rejects spatial sizes that cannot be pooled") {
  const ModelConfig cfg = toy_config();
  auto m = brve::init_model<float>(cfg, 1);
  const DenseTensor bad({8, 6, 8}, 0.5f);  // 6 % 4 != 0
  CHECK_THROWS_WITH_AS((void)brve::unet_forward(bad, m.u1, true),
                       doctest::Contains("divisible"), std::invalid_argument);
}

TEST_CASE("shift_unet_forward: shared slot parameters map an all-zero window symmetrically") {
  const ModelConfig cfg = toy_config();
  auto m = brve::init_model<float>(cfg, 17);
  const DenseTensor z({8, 8, 8}, 0.0f);
  const auto out = brve::shift_unet_forward<float>({z, z, z}, m.u2, true);
  REQUIRE(out[0].shape() == z.shape());
  for (std::int64_t i = 0; i < z.numel(); ++i) {
    CHECK(out[1][i] == out[0][i]);
    CHECK(out[2][i] == out[0][i]);
  }
}

TEST_CASE("brve_forward: one finite output per frame, deterministic across runs") {
  const ModelConfig cfg = toy_config();
  auto m = brve::init_model<float>(cfg, 42);
  for (int t = 1; t <= 5; ++t)
    for (int stride = 1; stride <= 3; ++stride) {
      const auto frames = random_frames(t, 4, 8, 8, brve::substream(7, t * 10 + stride));
      const auto out = brve::brve_forward(m, frames, stride);
      REQUIRE(static_cast<int>(out.size()) == t);
      for (const auto& o : out) {
        REQUIRE(o.shape() == std::vector<std::int64_t>{4, 8, 8});
        REQUIRE(o.all_finite());
        REQUIRE(o.numel() > 0);
      }
      const auto again = brve::brve_forward(m, frames, stride);
      for (int f = 0; f < t; ++f)
        for (std::int64_t i = 0; i < out[static_cast<std::size_t>(f)].numel(); ++i)
          REQUIRE(out[static_cast<std::size_t>(f)][i] == again[static_cast<std::size_t>(f)][i]);
    }
}

TEST_CASE("brve_forward: stride 3 keeps disjoint triples independent") {
  const ModelConfig cfg = toy_config();
  auto m = brve::init_model<float>(cfg, 42);
  auto frames = random_frames(6, 4, 8, 8, 3141);
  const auto base = brve::brve_forward(m, frames, 3);
  frames[4][0] += 5.0f;  // perturb the second triple
  const auto pert = brve::brve_forward(m, frames, 3);
  for (int f = 0; f < 3; ++f)
    for (std::int64_t i = 0; i < base[static_cast<std::size_t>(f)].numel(); ++i)
      REQUIRE(base[static_cast<std::size_t>(f)][i] == pert[static_cast<std::size_t>(f)][i]);
  bool changed = false;
  for (std::int64_t i = 0; i < base[4].numel(); ++i)
    if (base[4][i] != pert[4][i]) changed = true;
  CHECK(changed);
}

TEST_CASE("brve_forward rejects malformed sequences") {
  const ModelConfig cfg = toy_config();
  auto m = brve::init_model<float>(cfg, 42);
  CHECK_THROWS_AS((void)brve::brve_forward(m, {}, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)brve::brve_forward(m, random_frames(2, 3, 8, 8, 1), 1),
                  std::invalid_argument);
}

TEST_CASE("config round trip and architecture string stability") {
  ModelConfig cfg = toy_config();
  cfg.stride = 2;
  const ModelConfig back = brve::parse_config(brve::serialize_config(cfg));
  CHECK(back.levels == cfg.levels);
  CHECK(back.base_channels == cfg.base_channels);
  CHECK(back.stride == 2);
  ModelConfig other = cfg;
  other.stride = 3;  // runtime field, not part of the architecture identity
  CHECK(brve::architecture_string(cfg) == brve::architecture_string(other));
  other.base_channels = 16;
  CHECK(brve::architecture_string(cfg) != brve::architecture_string(other));
  CHECK_THROWS_AS(brve::parse_config("levels=\n"), std::invalid_argument);
  CHECK_THROWS_AS(brve::parse_config("unknown_key=3\n"), std::invalid_argument);
}

TEST_CASE("checkpoint: save/load round trip is bitwise exact") {
  const ModelConfig cfg = toy_config();
  auto m = brve::init_model<float>(cfg, 7);
  const std::string path = "test_ckpt_roundtrip.bin";
  brve::save_checkpoint(path, m);
  auto loaded = brve::load_checkpoint(path, cfg);
  std::vector<float> va, vb;
  brve::visit_params<float>(m, [&](const std::string&, DenseTensor& t) {
    va.insert(va.end(), t.data(), t.data() + t.numel());
  });
  brve::visit_params<float>(loaded, [&](const std::string&, DenseTensor& t) {
    vb.insert(vb.end(), t.data(), t.data() + t.numel());
  });
  REQUIRE(va.size() == vb.size());
  CHECK(std::memcmp(va.data(), vb.data(), va.size() * sizeof(float)) == 0);
  // derived state must be usable straight after loading
  const auto frames = random_frames(2, 4, 8, 8, 5);
  const auto o1 = brve::brve_forward(m, frames, 1);
  const auto o2 = brve::brve_forward(loaded, frames, 1);
  for (std::int64_t i = 0; i < o1[0].numel(); ++i) CHECK(o1[0][i] == o2[0][i]);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint: wrong architecture and trailing bytes are rejected") {
  const ModelConfig cfg = toy_config();
  auto m = brve::init_model<float>(cfg, 7);
  const std::string path = "test_ckpt_mismatch.bin";
  brve::save_checkpoint(path, m);
  ModelConfig other = cfg;
  other.base_channels = 16;
  CHECK_THROWS_WITH_AS((void)brve::load_checkpoint(path, other),
                       doctest::Contains("architecture"), std::runtime_error);
  {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    f.put('x');
  }
  CHECK_THROWS_WITH_AS((void)brve::load_checkpoint(path, cfg), doctest::Contains("trailing"),
                       std::runtime_error);
  std::remove(path.c_str());
  CHECK_THROWS_AS((void)brve::load_checkpoint("no_such_file.bin", cfg), std::runtime_error);
}

TEST_CASE("count_flops: binary conv cost follows the closed form") {
  CHECK(brve::conv_macs(64, 64, 3, 256, 256) == 64.0 * 64.0 * 9.0 * 256.0 * 256.0);
  // hand-summed binary MACs for a minimal model, one frame, one window:
  // stage 1 U-Net 5184 + shift U-Net 38880 + stage 3 (fusion 4608 + U-Net
  // 5184) = 53856
  ModelConfig cfg;
  cfg.levels = 1;
  cfg.base_channels = 4;
  cfg.blocks_per_level = 1;
  cfg.daca_enabled = false;
  const brve::FlopsReport r = brve::count_flops(cfg, 1, 8, 8, 3);
  CHECK(r.ops_bin == 53856.0);
  CHECK(r.windows == 1);
  CHECK(r.frames == 1);
}

TEST_CASE("count_flops: parameter counts agree with the canonical walk") {
  for (const bool daca : {true, false}) {
    ModelConfig cfg = toy_config();
    cfg.daca_enabled = daca;
    auto m = brve::init_model<float>(cfg, 3);
    const ParamCounts pc = walk_counts(m);
    const brve::FlopsReport r = brve::count_flops(cfg, 4, 32, 32, 1);
    CHECK(r.params_bin == pc.bin);
    CHECK(r.params_fp == pc.fp);
  }
}

TEST_CASE("count_flops: larger temporal strides cost less") {
  ModelConfig cfg;  // defaults
  const brve::FlopsReport s1 = brve::count_flops(cfg, 10, 256, 256, 1);
  const brve::FlopsReport s2 = brve::count_flops(cfg, 10, 256, 256, 2);
  const brve::FlopsReport s3 = brve::count_flops(cfg, 10, 256, 256, 3);
  CHECK(s2.total_ops() < s1.total_ops());
  CHECK(s3.total_ops() < s2.total_ops());
  const double rel = s2.total_ops() / s1.total_ops();
  CHECK(rel > 0.45);
  CHECK(rel < 0.70);
  CHECK(s1.effective_params() == s2.effective_params());
  // the default configuration sits in the intended sub-megaparameter band
  CHECK(s1.effective_params() > 0.1e6);
  CHECK(s1.effective_params() < 0.4e6);
}
