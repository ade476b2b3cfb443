#include <doctest.h>

#include "emo/attention/attention.hpp"
#include "emo/error.hpp"
#include "emo/numerics/flops.hpp"
#include "emo/numerics/grad_check.hpp"
#include "emo/numerics/ops.hpp"

using namespace emo;
using num::Rng;
using num::Tensor;
using num::Var;

TEST_CASE("cross attention over a single patch returns the residual plus its value") {
  Rng rng(1);
  const auto w = attn::AttentionWeights::init(rng, 8);
  const Var f = Var::constant(rng.normal_tensor({1, 8}, 1.0));
  const Tensor v = num::matmul(f, w.wv).value();
  for (int trial = 0; trial < 3; ++trial) {
    const Var q = Var::constant(rng.normal_tensor({5, 8}, 3.0));
    const Tensor out = attn::cross_attention(q, f, w).value();
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t c = 0; c < 8; ++c) CHECK(out.at(i, c) == doctest::Approx(q.value().at(i, c) + v[c]).epsilon(1e-14));
  }
}

TEST_CASE("identical keys give uniform attention and the mean value") {
  Rng rng(2);
  auto w = attn::AttentionWeights::init(rng, 8);
  // Zero key projection makes every key identical regardless of the features.
  w.wk = Var::parameter(Tensor({8, 8}));
  const Var f = Var::constant(rng.normal_tensor({6, 8}, 1.0));
  const Var q = Var::constant(rng.normal_tensor({3, 8}, 1.0));
  const auto kv = attn::project_memory(f, w);
  const Tensor weights = attn::cross_attention_weights(q, kv, w);
  for (double x : weights.data()) CHECK(x == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  const Tensor mean_v = num::mean_rows(kv.v).value();
  const Tensor out = attn::cross_attention(q, kv, w).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 8; ++c)
      CHECK(out.at(i, c) == doctest::Approx(q.value().at(i, c) + mean_v[c]).epsilon(1e-12));
}

TEST_CASE("attention rows sum to one and empty memory is rejected") {
  Rng rng(3);
  const auto w = attn::AttentionWeights::init(rng, 16);
  const Var f = Var::constant(rng.normal_tensor({20, 16}, 2.0));
  const Var q = Var::constant(rng.normal_tensor({7, 16}, 2.0));
  const Tensor weights = attn::cross_attention_weights(q, attn::project_memory(f, w), w);
  for (std::size_t i = 0; i < weights.rows(); ++i) {
    double s = 0.0;
    for (double x : weights.row(i)) s += x;
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(attn::cross_attention(q, Var::constant(Tensor({0, 16})), w), ShapeError);
  CHECK_THROWS_AS(attn::cross_attention(Var::constant(Tensor({2, 8})), f, w), ShapeError);
}

TEST_CASE("cross attention is invariant to permuting the memory") {
  Rng rng(4);
  const auto w = attn::AttentionWeights::init(rng, 8, 2);
  const Var f = Var::constant(rng.normal_tensor({12, 8}, 1.0));
  const Var q = Var::constant(rng.normal_tensor({4, 8}, 1.0));
  const Tensor ref = attn::cross_attention(q, f, w).value();
  for (int trial = 0; trial < 20; ++trial) {
    const auto perm = rng.fork(trial).permutation(12);
    const Tensor out = attn::cross_attention(q, num::gather_rows(f, perm), w).value();
    CHECK(num::max_abs_diff(out, ref) <= 1e-12);
  }
}

TEST_CASE("attention gradients match finite differences") {
  for (std::size_t heads : {1, 2}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(100 + seed);
      const auto w = attn::AttentionWeights::init(rng, 8, heads);
      const Var f = Var::parameter(rng.normal_tensor({5, 8}, 1.0));
      const Var q = Var::parameter(rng.normal_tensor({3, 8}, 1.0));
      const Var r = Var::constant(rng.normal_tensor({3, 8}, 1.0));
      const auto loss = [&] { return num::sum(num::mul(attn::cross_attention(q, f, w), r)); };
      const auto res = num::grad_check_params(loss, {q, f, w.wq, w.wk, w.wv}, 1e-3);
      CAPTURE(res.analytic);
      CAPTURE(res.numeric);
      CAPTURE(res.worst_param);
      CHECK(res.max_rel_error <= 1e-4);
      const auto self_loss = [&] { return num::sum(num::mul(attn::self_attention_baseline(q, w), r)); };
      CHECK(num::grad_check_params(self_loss, {q, w.wq, w.wk, w.wv}, 1e-3).max_rel_error <= 1e-4);
    }
  }
}

TEST_CASE("self attention baseline") {
  Rng rng(5);
  const auto w = attn::AttentionWeights::init(rng, 8);
  SUBCASE("one token gives residual plus its value") {
    const Var x = Var::constant(rng.normal_tensor({1, 8}, 1.0));
    const Tensor v = num::matmul(x, w.wv).value();
    const Tensor out = attn::self_attention_baseline(x, w).value();
    for (std::size_t c = 0; c < 8; ++c) CHECK(out[c] == doctest::Approx(x.value()[c] + v[c]).epsilon(1e-14));
  }
  SUBCASE("row permutation equivariance") {
    const Var x = Var::constant(rng.normal_tensor({9, 8}, 1.0));
    const Tensor ref = attn::self_attention_baseline(x, w).value();
    const auto perm = rng.permutation(9);
    const Tensor out = attn::self_attention_baseline(num::gather_rows(x, perm), w).value();
    CHECK(num::max_abs_diff(out, num::gather_rows(Var::constant(ref), perm).value()) <= 1e-12);
  }
  SUBCASE("attention matrix FLOPs quadruple when M doubles") {
    for (std::uint64_t m : {16, 64, 256}) CHECK(attn::self_attention_matrix_flops(2 * m, 8) == 4 * attn::self_attention_matrix_flops(m, 8));
    for (std::size_t m : {3, 17}) {
      const Var x = Var::constant(rng.normal_tensor({m, 8}, 1.0));
      num::FlopScope scope;
      attn::self_attention_core(x, w);
      CHECK(scope.elapsed() == attn::self_attention_core_flops(m, 8));
    }
  }
  CHECK_THROWS_AS(attn::self_attention_baseline(Var::constant(Tensor({0, 8})), w), ShapeError);
}

TEST_CASE("cross attention FLOPs match the closed form") {
  Rng rng(6);
  for (std::size_t heads : {1, 4}) {
    const auto w = attn::AttentionWeights::init(rng, 16, heads);
    const Var f = Var::constant(rng.normal_tensor({10, 16}, 1.0));
    const Var q = Var::constant(rng.normal_tensor({7, 16}, 1.0));
    num::FlopScope mem;
    const auto kv = attn::project_memory(f, w);
    CHECK(mem.elapsed() == attn::project_memory_flops(10, 16));
    num::FlopScope scope;
    attn::cross_attention(q, kv, w);
    CHECK(scope.elapsed() == attn::cross_attention_flops(7, 10, 16, heads));
  }
}
