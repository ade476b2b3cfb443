#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "emo/numerics/autograd.hpp"
#include "emo/numerics/rng.hpp"

namespace emo::ssm {

using num::Tensor;
using num::Var;

// Input-dependent diagonal state-space parameters for D channels with n
// states each. Per token x_t (a row of length D):
//   delta_t = softplus(x_t . w_delta + delta_bias)    (scalar, > 0)
//   B_t = x_t w_b, C_t = x_t w_c                        (length n)
//   A = -exp(a_log)                                     (D x n, < 0)
struct SsmParams {
  Var w_delta;     // (D, 1)
  Var delta_bias;  // (1)
  Var w_b;         // (D, n)
  Var w_c;         // (D, n)
  Var a_log;       // (D, n)

  std::size_t dim() const { return w_b.value().dim(0); }
  std::size_t n_state() const { return w_b.value().dim(1); }
  Tensor a() const;

  // A initialized to -(1..n) per channel; delta bias so that softplus(bias)
  // lies in [0.01, 0.1].
  static SsmParams init(num::Rng& rng, std::size_t dim, std::size_t n_state);

  std::vector<std::pair<std::string, Var>> named_parameters(const std::string& prefix) const;
};

struct DiscretizedStep {
  Tensor a_bar;  // (D, n)
  Tensor b_bar;  // (D, n)
};

struct ScanOutput {
  Tensor y;  // (L, D)
  Tensor h;  // (D, n) final hidden state
};

struct ZohResult {
  double a_bar;
  double b_bar;
};

// Exact zero-order hold for one scalar mode. Throws DomainError for delta <= 0.
ZohResult zoh_discretize(double a, double delta, double b);

// Sequential reference: h_t = a_bar_t * h_{t-1} + b_bar_t * x_t, y_t = <c_t, h_t>
// with h_0 = 0. c is (L, n), x is (L, D).
ScanOutput recurrence_naive(const std::vector<DiscretizedStep>& steps, const Tensor& c, const Tensor& x);

// Selective scan over x (L, D) -> (L, D), differentiable in x and all params.
Var selective_scan(const SsmParams& params, const Var& x);

// Mean of the forward scan and the time-reversed backward scan.
Var bidirectional_scan(const SsmParams& fwd, const SsmParams& bwd, const Var& x);

// Reverses the row order.
Var reverse_rows(const Var& x);

}  // namespace emo::ssm
