#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "emo/decoder/decoder.hpp"
#include "emo/decoder/encoder.hpp"
#include "emo/error.hpp"
#include "emo/numerics/flops.hpp"
#include "emo/numerics/grad_check.hpp"
#include "emo/numerics/ops.hpp"
#include "emo/numerics/stats.hpp"

using namespace emo;
using decoder::DecoderConfig;
using decoder::HumanQueries;
using num::Rng;
using num::Tensor;
using num::Var;

namespace {

DecoderConfig small_config() {
  DecoderConfig cfg;
  cfg.dim = 16;
  cfg.n_state = 4;
  cfg.n_layers = 2;
  cfg.n_persons = 2;
  cfg.topo = scan::SkeletonTopology::from_parents({-1, 0, 1, 0, 3});
  return cfg;
}

HumanQueries random_queries(Rng& rng, const DecoderConfig& cfg, bool grad = false) {
  const auto make = grad ? Var::parameter : Var::constant;
  return {make(rng.normal_tensor({cfg.n_tokens(), cfg.dim}, 1.0)),
          make(rng.uniform_tensor({cfg.n_tokens(), 4}, 0.2, 0.8)), cfg.n_persons, cfg.n_joints()};
}

// Random offset heads so anchors move and carry gradient.
void randomize_offsets(Rng& rng, decoder::DecoderWeights& w) {
  for (auto& l : w.layers)
    for (auto* b : {&l.global, &l.local}) {
      b->mlp_offset.w = Var::parameter(rng.normal_tensor(b->mlp_offset.w.shape(), 0.3));
      b->mlp_offset.b = Var::parameter(rng.normal_tensor(b->mlp_offset.b.shape(), 0.3));
    }
}

}  // namespace

TEST_CASE("rearrange round trip is exact") {
  Rng rng(1);
  std::vector<HumanQueries> batch;
  for (int b = 0; b < 3; ++b)
    batch.push_back({Var::constant(rng.normal_tensor({10, 8}, 1.0)), Var::constant(rng.uniform_tensor({10, 4}, 0, 1)),
                     2, 5});
  const auto persons = decoder::rearrange_to_persons(batch);
  REQUIRE(persons.q.size() == 6);
  CHECK(persons.q[3].value() == num::slice_rows(batch[1].q, 5, 5).value());
  const auto back = decoder::rearrange_from_persons(persons, 2);
  REQUIRE(back.size() == 3);
  for (int b = 0; b < 3; ++b) {
    CHECK(back[b].q.value() == batch[b].q.value());
    CHECK(back[b].anchors.value() == batch[b].anchors.value());
  }
  CHECK_THROWS_AS(decoder::rearrange_from_persons(persons, 4), ShapeError);
}

TEST_CASE("token selection") {
  Rng rng(2);
  nn::Linear head{Var::parameter(Tensor({1, 1}, 1.0)), Var::parameter(Tensor({1}))};
  SUBCASE("decreasing scores pick the first patches") {
    Tensor f({6, 1});
    for (std::size_t i = 0; i < 6; ++i) f[i] = 5.0 - static_cast<double>(i);
    const auto s = decoder::select_tokens(Var::constant(f), head, 3);
    CHECK(s.patches == std::vector<std::size_t>{0, 1, 2});
    CHECK(s.scores[0] > s.scores[1]);
  }
  SUBCASE("ties go to the lower index") {
    const auto s = decoder::select_tokens(Var::constant(Tensor({6, 1}, 0.3)), head, 4);
    CHECK(s.patches == std::vector<std::size_t>{0, 1, 2, 3});
  }
  SUBCASE("random scores match a full sort") {
    for (int trial = 0; trial < 50; ++trial) {
      const auto sh = nn::Linear::init(rng, 8, 1);
      const Var f = Var::constant(rng.normal_tensor({16, 8}, 1.0));
      const Tensor logits = sh(f).value();
      std::vector<std::size_t> idx(16);
      std::iota(idx.begin(), idx.end(), 0);
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return logits[a] != logits[b] ? logits[a] > logits[b] : a < b;
      });
      const auto s = decoder::select_tokens(f, sh, 3);
      CHECK(s.patches == std::vector<std::size_t>(idx.begin(), idx.begin() + 3));
      CHECK(s.tokens.value() == num::gather_rows(f, s.patches).value());
    }
  }
  CHECK_THROWS_AS(decoder::select_tokens(Var::constant(Tensor({2, 1})), head, 3), ShapeError);
}

TEST_CASE("query expansion") {
  Rng rng(3);
  const Var t = Var::constant(rng.normal_tensor({2, 8}, 1.0));
  auto mlp = nn::Mlp::init(rng, 8, 8, 4, true);
  SUBCASE("zero joint embedding repeats the body token") {
    const auto q = decoder::expand_queries(t, Var::constant(Tensor({3, 8})), mlp);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 8; ++c) CHECK(q.q.value().at(i, c) == t.value().at(i / 3, c));
    for (double a : q.anchors.value().data()) CHECK(a == 0.5);
  }
  SUBCASE("layout is person-major") {
    const Var je = Var::constant(rng.normal_tensor({3, 8}, 1.0));
    const auto q = decoder::expand_queries(t, je, nn::Mlp::init(rng, 8, 8, 4, false));
    REQUIRE(q.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(q.index(q.person_of(i), q.joint_of(i)) == i);
      for (std::size_t c = 0; c < 8; ++c)
        CHECK(q.q.value().at(i, c) == t.value().at(i / 3, c) + je.value().at(i % 3, c));
      for (std::size_t c = 0; c < 4; ++c)
        CHECK(q.anchors.value().at(i, c) == q.anchors.value().at(q.index(q.person_of(i), 0), c));
    }
    CHECK(q.person_of(4) == 1);
    CHECK(q.joint_of(4) == 1);
  }
}

TEST_CASE("layer behaviour") {
  Rng rng(4);
  auto cfg = small_config();
  const Var f = Var::constant(rng.normal_tensor({6, 16}, 1.0));
  SUBCASE("a single person runs the global stage over its J tokens") {
    cfg.n_persons = 1;
    const auto w = decoder::DecoderWeights::init(rng, cfg);
    const auto q = random_queries(rng, cfg);
    const auto out = decoder::decode(cfg, w, q, f);
    REQUIRE(out.size() == 2);
    CHECK(out[0].q.shape() == num::Shape{5, 16});
    CHECK(out[0].anchors.shape() == num::Shape{5, 4});
  }
  SUBCASE("zero queries with zero-initialized outputs are deterministic") {
    cfg.zero_init_outputs = true;
    const auto w = decoder::DecoderWeights::init(rng, cfg);
    HumanQueries q{Var::constant(Tensor({10, 16})), Var::constant(Tensor({10, 4}, 0.5)), 2, 5};
    const auto a = decoder::decode(cfg, w, q, f);
    const auto b = decoder::decode(cfg, w, q, f);
    CHECK(a[1].q.value() == b[1].q.value());
    CHECK(num::frobenius_norm(a[0].q.value()) > 0.0);
  }
  SUBCASE("one layer equals one layer application") {
    cfg.n_layers = 1;
    const auto w = decoder::DecoderWeights::init(rng, cfg);
    const auto q = random_queries(rng, cfg);
    const auto out = decoder::decode(cfg, w, q, f);
    REQUIRE(out.size() == 1);
    const auto kv = attn::project_memory(f, w.layers[0].cross);
    CHECK(out[0].q.value() == decoder::sgld_layer(cfg, w.layers[0], q, kv).q.value());
  }
  SUBCASE("zero offset heads keep anchors fixed through every layer") {
    cfg.n_layers = 3;
    const auto w = decoder::DecoderWeights::init(rng, cfg);
    const auto q = random_queries(rng, cfg);
    for (const auto& stage : decoder::decode(cfg, w, q, f)) CHECK(stage.anchors.value() == q.anchors.value());
  }
  SUBCASE("weights and config must agree") {
    const auto w = decoder::DecoderWeights::init(rng, cfg);
    auto other = cfg;
    other.n_layers = 3;
    CHECK_THROWS_AS(decoder::decode(other, w, random_queries(rng, cfg), f), ConfigError);
    HumanQueries bad{Var::constant(Tensor({9, 16})), Var::constant(Tensor({9, 4})), 3, 3};
    CHECK_THROWS_AS(decoder::sgld_layer(cfg, w.layers[0], bad, attn::project_memory(f, w.layers[0].cross)),
                    ShapeError);
  }
}

TEST_CASE("local stage is equivariant to exchanging persons") {
  Rng rng(5);
  auto cfg = small_config();
  cfg.n_persons = 3;
  auto w = decoder::DecoderWeights::init(rng, cfg);
  randomize_offsets(rng, w);
  const auto q = random_queries(rng, cfg);
  const std::vector<std::size_t> swap_rows = [] {
    std::vector<std::size_t> r;
    for (std::size_t p : {2, 1, 0})
      for (std::size_t j = 0; j < 5; ++j) r.push_back(p * 5 + j);
    return r;
  }();
  const auto ref = decoder::local_stage(cfg, w.layers[0], q);
  const HumanQueries swapped{num::gather_rows(q.q, swap_rows), num::gather_rows(q.anchors, swap_rows), 3, 5};
  const auto out = decoder::local_stage(cfg, w.layers[0], swapped);
  CHECK(num::gather_rows(out.q, swap_rows).value() == ref.q.value());
  CHECK(num::gather_rows(out.anchors, swap_rows).value() == ref.anchors.value());
}

TEST_CASE("decoder is deterministic and checkpoints round trip") {
  auto cfg = small_config();
  Rng rng(6);
  const Var f = Var::constant(rng.normal_tensor({6, 16}, 1.0));
  auto w = decoder::DecoderWeights::init(rng, cfg);
  randomize_offsets(rng, w);
  const auto a = decoder::run_decoder(cfg, w, f);
  const auto b = decoder::run_decoder(cfg, w, f);
  CHECK(a.stages.back().q.value() == b.stages.back().q.value());
  CHECK(a.stages.back().anchors.value() == b.stages.back().anchors.value());

  const auto stem = std::filesystem::temp_directory_path() / "emo_test_ckpt" / "weights";
  decoder::to_archive(w.named_parameters()).save(stem);
  Rng other(99);
  auto fresh = decoder::DecoderWeights::init(other, cfg);
  decoder::from_archive(io::Archive::load(stem), fresh.named_parameters());
  const auto c = decoder::run_decoder(cfg, fresh, f);
  CHECK(c.stages.back().q.value() == a.stages.back().q.value());
  CHECK(c.stages.back().anchors.value() == a.stages.back().anchors.value());

  auto wider = cfg;
  wider.dim = 24;
  auto mismatch = decoder::DecoderWeights::init(other, wider);
  CHECK_THROWS_AS(decoder::from_archive(io::Archive::load(stem), mismatch.named_parameters()), IoError);
  CHECK_THROWS_AS(io::Archive::load(stem.string() + "_missing"), IoError);
}

TEST_CASE("full layer gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(300 + seed);
    const auto cfg = small_config();
    auto w = decoder::DecoderWeights::init(rng, cfg);
    randomize_offsets(rng, w);
    const auto q = random_queries(rng, cfg, true);
    const Var f = Var::parameter(rng.normal_tensor({6, 16}, 1.0));
    const Var rq = Var::constant(rng.normal_tensor({10, 16}, 1.0));
    const Var ra = Var::constant(rng.normal_tensor({10, 4}, 1.0));
    const auto loss = [&] {
      const auto out = decoder::sgld_layer(cfg, w.layers[0], q, attn::project_memory(f, w.layers[0].cross));
      return num::add(num::sum(num::mul(out.q, rq)), num::sum(num::mul(out.anchors, ra)));
    };
    std::vector<Var> params{q.q, q.anchors, f};
    for (const auto& [name, p] : w.named_parameters())
      if (name.rfind("layer0.", 0) == 0) params.push_back(p);
    const auto r = num::grad_check_params(loss, params, 1e-3, 8);
    CAPTURE(seed);
    CAPTURE(r.worst_param);
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("layer FLOPs are affine in the token count") {
  auto cfg = DecoderConfig{};
  cfg.dim = 16;
  cfg.n_state = 4;
  Rng rng(7);
  const auto w = decoder::DecoderWeights::init(rng, cfg);
  const Var f = Var::constant(rng.normal_tensor({64, 16}, 1.0));
  const auto kv = attn::project_memory(f, w.layers[0].cross);
  std::vector<double> m, flops;
  for (std::size_t n : {2, 4, 8}) {
    auto c = cfg;
    c.n_persons = n;
    const HumanQueries q{Var::constant(rng.normal_tensor({c.n_tokens(), 16}, 1.0)),
                         Var::constant(rng.uniform_tensor({c.n_tokens(), 4}, 0.1, 0.9)), n, 23};
    num::FlopScope scope;
    decoder::sgld_layer(c, w.layers[0], q, kv);
    CHECK(scope.elapsed() == decoder::sgld_layer_flops(c, n, 64));
  }
  for (std::uint64_t n = 2; n <= 64; n *= 2) {
    m.push_back(static_cast<double>(n * 23));
    flops.push_back(static_cast<double>(decoder::sgld_layer_flops(cfg, n, 64)));
  }
  // M from 46 to 1472: equal increments per added person.
  const double step = (flops[1] - flops[0]) / (m[1] - m[0]);
  for (std::size_t i = 1; i < m.size(); ++i) CHECK((flops[i] - flops[i - 1]) / (m[i] - m[i - 1]) == step);
  CHECK(num::fit_loglog(m, flops).slope == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("doubling persons doubles scan FLOPs and quadruples global attention FLOPs") {
  auto cfg = DecoderConfig{};
  cfg.dim = 16;
  cfg.n_state = 4;
  auto attn_cfg = cfg;
  attn_cfg.global_mixer = block::MixerKind::kSelfAttention;
  const auto g = [](const DecoderConfig& c, std::uint64_t n) { return double(block::block_flops(c.global_block(), n * 23)); };
  CHECK(g(cfg, 64) / g(cfg, 32) == doctest::Approx(2.0).epsilon(0.01));
  CHECK(g(attn_cfg, 256) / g(attn_cfg, 128) > 3.5);
  std::vector<double> m, scan_f, attn_f;
  for (std::uint64_t n = 16; n <= 512; n *= 2) {
    m.push_back(double(n * 23));
    scan_f.push_back(double(decoder::sgld_layer_flops(cfg, n, 64)));
    attn_f.push_back(double(decoder::sgld_layer_flops(attn_cfg, n, 64)));
  }
  CHECK(num::fit_loglog(m, scan_f).slope == doctest::Approx(1.0).epsilon(0.1));
  const std::vector<double> top_m(m.end() - 4, m.end()), top_f(attn_f.end() - 4, attn_f.end());
  CHECK(num::fit_loglog(top_m, top_f).slope >= 1.6);
}

TEST_CASE("stub encoder") {
  decoder::EncoderConfig ec;
  ec.channels = 3;
  ec.dim = 16;
  const decoder::StubEncoder enc(ec);
  Rng rng(8);
  const Tensor pixels = rng.uniform_tensor({ec.pixels(), 3}, 0.0, 1.0);
  const Tensor a = enc.encode(pixels);
  CHECK(a.shape() == num::Shape{64, 16});
  CHECK(decoder::StubEncoder(ec).encode(pixels) == a);
  CHECK(a.all_finite());
  CHECK(enc.patch_center(9).first == doctest::Approx(1.5 / 8));
  CHECK(enc.patch_center(9).second == doctest::Approx(1.5 / 8));
  // Patches see their own pixels: changing one pixel changes only its patch.
  Tensor changed = pixels;
  changed.at(0, 1) += 1.0;
  const Tensor b = enc.encode(changed);
  for (std::size_t c = 0; c < 16; ++c) CHECK(b.at(1, c) == a.at(1, c));
  CHECK(num::max_abs_diff(b, a) > 0.0);
  CHECK_THROWS_AS(enc.encode(Tensor({5, 3})), ShapeError);
}
