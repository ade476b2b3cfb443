#include <doctest.h>

#include <cmath>
#include <numbers>

#include "emo/block/block.hpp"
#include "emo/error.hpp"
#include "emo/numerics/flops.hpp"
#include "emo/numerics/grad_check.hpp"
#include "emo/numerics/ops.hpp"
#include "emo/ssm/ssm.hpp"

using namespace emo;
using block::MixerKind;
using num::Rng;
using num::Tensor;
using num::Var;

namespace {

constexpr MixerKind kAllKinds[] = {MixerKind::kUnidirectional,      MixerKind::kBidirectional,
                                   MixerKind::kLocalUnidirectional, MixerKind::kLocalBidirectional,
                                   MixerKind::kSelfAttention,       MixerKind::kTokenMlp};

block::BlockConfig config(MixerKind kind, std::size_t dim = 16) {
  block::BlockConfig cfg;
  cfg.dim = dim;
  cfg.n_state = 4;
  cfg.mixer = kind;
  cfg.topo = scan::SkeletonTopology::from_parents({-1, 0, 1, 0, 3, 0});
  return cfg;
}

Var random_anchors(Rng& rng, std::size_t n) { return Var::parameter(rng.uniform_tensor({n, 4}, 0.2, 0.8)); }

// Random offset head so the anchor path carries gradient.
void randomize_offset(Rng& rng, block::BlockWeights& w) {
  w.mlp_offset.w = Var::parameter(rng.normal_tensor(w.mlp_offset.w.shape(), 0.3));
  w.mlp_offset.b = Var::parameter(rng.normal_tensor(w.mlp_offset.b.shape(), 0.3));
}

}  // namespace

TEST_CASE("sinusoidal encoding examples") {
  const Tensor zero = block::sinusoidal_pe(Tensor({1, 4}), 16);
  for (std::size_t i = 0; i < 16; ++i) CHECK(zero[i] == (i % 2 == 0 ? 0.0 : 1.0));

  const Tensor two = block::sinusoidal_pe(Tensor::from_rows({{0.3, 0.7, 0.1, 0.9}, {0.3, 0.7, 0.1, 0.9}}), 32);
  for (std::size_t c = 0; c < 32; ++c) CHECK(two.at(0, c) == two.at(1, c));

  // Moving 0.5 from cx to cy swaps the first two coordinate blocks.
  const Tensor a = block::sinusoidal_pe(Tensor::from_rows({{0.5, 0, 0, 0}}), 32);
  const Tensor b = block::sinusoidal_pe(Tensor::from_rows({{0, 0.5, 0, 0}}), 32);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(a[i] == b[8 + i]);
    CHECK(a[8 + i] == b[i]);
    CHECK(a[16 + i] == b[16 + i]);
    CHECK(a[24 + i] == b[24 + i]);
  }
  // Lowest frequency of a block is one full turn over the unit interval.
  CHECK(a[0] == doctest::Approx(std::sin(std::numbers::pi)).epsilon(1e-15));

  CHECK_THROWS_AS(block::sinusoidal_pe(Tensor({1, 4}), 12), ConfigError);
  CHECK_THROWS_AS(block::sinusoidal_pe(Tensor({1, 3}), 16), ShapeError);
}

TEST_CASE("encoding and anchor refinement gradients") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Tensor boxes = rng.uniform_tensor({3, 4}, 0.05, 0.95);
    const Tensor r = rng.normal_tensor({3, 16}, 1.0);
    const auto pe_loss = [&](const Var& b) { return num::sum(num::mul(block::sinusoidal_pe(b, 16), Var::constant(r))); };
    CHECK(num::grad_check(pe_loss, boxes, 1e-3).max_rel_error <= 1e-4);

    const Var a = Var::parameter(boxes);
    const Var off = Var::parameter(rng.normal_tensor({3, 4}, 1.0));
    const Var r4 = Var::constant(rng.normal_tensor({3, 4}, 1.0));
    const auto loss = [&] { return num::sum(num::mul(block::refine_anchors(a, off), r4)); };
    CHECK(num::grad_check_params(loss, {a, off}, 1e-3).max_rel_error <= 1e-4);
  }
}

TEST_CASE("refined anchors stay in the unit square and match the sigmoid form") {
  Rng rng(7);
  const Var a = Var::constant(rng.uniform_tensor({50, 4}, 0.0, 1.0));
  const Var off = Var::constant(rng.normal_tensor({50, 4}, 30.0));
  const Tensor out = block::refine_anchors(a, off).value();
  for (double x : out.data()) CHECK((x >= 0.0 && x <= 1.0));
  const Var small = Var::constant(rng.normal_tensor({50, 4}, 0.5));
  const Var mid = Var::constant(rng.uniform_tensor({50, 4}, 0.01, 0.99));
  const Tensor ref = num::sigmoid(num::add(num::logit(mid), small)).value();
  CHECK(num::max_abs_diff(block::refine_anchors(mid, small).value(), ref) <= 1e-12);
}

TEST_CASE("zero offset head leaves anchors untouched through stacked blocks") {
  for (auto kind : kAllKinds) {
    Rng rng(11);
    auto cfg = config(kind);
    std::vector<block::BlockWeights> blocks;
    for (int i = 0; i < 3; ++i) blocks.push_back(block::BlockWeights::init(rng, cfg));
    Var t = Var::constant(rng.normal_tensor({12, 16}, 1.0));
    const Var a0 = Var::constant(rng.uniform_tensor({12, 4}, 0.0, 1.0));
    Var a = a0;
    for (const auto& w : blocks) {
      const auto out = block::mamba_block_forward(cfg, w, t, a);
      t = out.tokens;
      a = out.anchors;
      CHECK(a.value() == a0.value());
    }
  }
}

TEST_CASE("zero-initialized output layers make the block the identity on T_in") {
  for (auto kind : kAllKinds) {
    Rng rng(12);
    auto cfg = config(kind);
    cfg.zero_init_outputs = true;
    const auto w = block::BlockWeights::init(rng, cfg);
    const Var t = Var::constant(rng.normal_tensor({12, 16}, 1.0));
    const Var a = Var::constant(rng.uniform_tensor({12, 4}, 0.0, 1.0));
    const Var t_in = num::add(t, w.mlp_pe(block::sinusoidal_pe(a, 16)));
    CHECK(block::mamba_block_forward(cfg, w, t, a).tokens.value() == t_in.value());
  }
}

TEST_CASE("block gradients match finite differences") {
  for (auto kind : kAllKinds) {
    CAPTURE(block::to_string(kind));
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(200 + seed);
      const auto cfg = config(kind);
      auto w = block::BlockWeights::init(rng, cfg);
      randomize_offset(rng, w);
      const Var t = Var::parameter(rng.normal_tensor({12, 16}, 1.0));
      const Var a = random_anchors(rng, 12);
      const Var rt = Var::constant(rng.normal_tensor({12, 16}, 1.0));
      const Var ra = Var::constant(rng.normal_tensor({12, 4}, 1.0));
      const auto loss = [&] {
        const auto out = block::mamba_block_forward(cfg, w, t, a);
        return num::add(num::sum(num::mul(out.tokens, rt)), num::sum(num::mul(out.anchors, ra)));
      };
      std::vector<Var> params{t, a};
      for (const auto& [name, p] : w.named_parameters("")) params.push_back(p);
      const auto r = num::grad_check_params(loss, params, 1e-3, 24);
      CAPTURE(seed);
      CAPTURE(r.worst_param);
      CAPTURE(r.worst_index);
      CAPTURE(r.analytic);
      CAPTURE(r.numeric);
      CHECK(r.max_rel_error <= 1e-4);
    }
  }
}

TEST_CASE("every weight group receives gradient") {
  for (auto kind : kAllKinds) {
    Rng rng(13);
    const auto cfg = config(kind);
    const auto w = block::BlockWeights::init(rng, cfg);
    const Var t = Var::constant(rng.normal_tensor({12, 16}, 1.0));
    const Var a = Var::constant(rng.uniform_tensor({12, 4}, 0.1, 0.9));
    num::Tape tape;
    {
      num::Tape::Scope scope(tape);
      const auto out = block::mamba_block_forward(cfg, w, t, a);
      const Var loss = num::add(num::sum(num::square(out.tokens)), num::sum(num::square(out.anchors)));
      tape.backward(loss);
    }
    for (const auto& [name, p] : w.named_parameters("")) {
      CAPTURE(block::to_string(kind));
      CAPTURE(name);
      CHECK((p.has_grad() && num::frobenius_norm(p.grad()) > 0.0));
    }
  }
}

TEST_CASE("reversing tokens with swapped scan directions reverses the output") {
  Rng rng(14);
  const auto cfg = config(MixerKind::kBidirectional);
  auto w = block::BlockWeights::init(rng, cfg);
  randomize_offset(rng, w);
  const Var t = Var::constant(rng.normal_tensor({12, 16}, 1.0));
  const Var a = Var::constant(rng.uniform_tensor({12, 4}, 0.0, 1.0));
  const auto ref = block::mamba_block_forward(cfg, w, t, a);

  auto mirrored = w;
  std::swap(mirrored.ssm[0], mirrored.ssm[1]);
  mirrored.dw_kernel = ssm::reverse_rows(w.dw_kernel);
  const auto out = block::mamba_block_forward(cfg, mirrored, ssm::reverse_rows(t), ssm::reverse_rows(a));
  CHECK(out.tokens.value() == ssm::reverse_rows(ref.tokens).value());
  CHECK(out.anchors.value() == ssm::reverse_rows(ref.anchors).value());
}

TEST_CASE("anchor update is a pure function of the block inputs") {
  Rng rng(15);
  const auto cfg = config(MixerKind::kLocalBidirectional);
  auto w = block::BlockWeights::init(rng, cfg);
  randomize_offset(rng, w);
  const Var t = Var::constant(rng.normal_tensor({12, 16}, 1.0));
  const Var a = Var::constant(rng.uniform_tensor({12, 4}, 0.0, 1.0));
  const auto x = block::mamba_block_forward(cfg, w, t, a);
  const auto y = block::mamba_block_forward(cfg, w, t, a);
  CHECK(x.tokens.value() == y.tokens.value());
  CHECK(x.anchors.value() == y.anchors.value());
  CHECK(block::refine_anchors(a, w.mlp_offset(x.tokens)).value() == x.anchors.value());
}

TEST_CASE("block FLOPs match the closed form") {
  for (auto kind : kAllKinds) {
    for (bool residual : {true, false}) {
      Rng rng(16);
      auto cfg = config(kind);
      cfg.mlp_residual = residual;
      const auto w = block::BlockWeights::init(rng, cfg);
      const Var t = Var::constant(rng.normal_tensor({18, 16}, 1.0));
      const Var a = Var::constant(rng.uniform_tensor({18, 4}, 0.0, 1.0));
      num::FlopScope scope;
      block::mamba_block_forward(cfg, w, t, a);
      CAPTURE(block::to_string(kind));
      CHECK(scope.elapsed() == block::block_flops(cfg, 18));
    }
  }
}

TEST_CASE("block input validation") {
  Rng rng(17);
  auto cfg = config(MixerKind::kLocalBidirectional);
  const auto w = block::BlockWeights::init(rng, cfg);
  CHECK_THROWS_AS(block::mamba_block_forward(cfg, w, Var::constant(Tensor({7, 16})), Var::constant(Tensor({7, 4}))),
                  ShapeError);
  CHECK_THROWS_AS(block::mamba_block_forward(cfg, w, Var::constant(Tensor({6, 16})), Var::constant(Tensor({5, 4}))),
                  ShapeError);
  auto other = cfg;
  other.mixer = MixerKind::kBidirectional;
  CHECK_THROWS_AS(block::mamba_block_forward(other, w, Var::constant(Tensor({6, 16})), Var::constant(Tensor({6, 4}))),
                  ConfigError);
  cfg.dim = 12;
  CHECK_THROWS_AS(block::BlockWeights::init(rng, cfg), ConfigError);
  CHECK(block::parse_mixer_kind("local_bi") == MixerKind::kLocalBidirectional);
  CHECK_THROWS_AS(block::parse_mixer_kind("sideways"), ConfigError);
}
