#pragma once

// Reference computations for checking. Nothing here calls into the kernels or
// fused ops it is used to check.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "emo/numerics/tensor.hpp"
#include "emo/ssm/ssm.hpp"

namespace emo::reference {

using emo::num::Tensor;

// exp(x) by its Taylor series in long double.
inline long double exp_series(long double x) {
  long double term = 1.0L, s = 1.0L;
  for (int k = 1; k < 60; ++k) {
    term *= x / k;
    s += term;
  }
  return s;
}

// Per-token discretization computed with plain loops, then the naive recurrence.
inline Tensor selective_scan(const emo::ssm::SsmParams& p, const Tensor& x) {
  const std::size_t len = x.dim(0), dim = x.dim(1), n = p.n_state();
  std::vector<emo::ssm::DiscretizedStep> steps;
  Tensor c({len, n});
  for (std::size_t t = 0; t < len; ++t) {
    double z = p.delta_bias.value()[0];
    for (std::size_t d = 0; d < dim; ++d) z += x.at(t, d) * p.w_delta.value().at(d, 0);
    const double delta = std::log(1.0 + std::exp(z));
    emo::ssm::DiscretizedStep step{Tensor({dim, n}), Tensor({dim, n})};
    for (std::size_t j = 0; j < n; ++j) {
      double b = 0.0, cc = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        b += x.at(t, d) * p.w_b.value().at(d, j);
        cc += x.at(t, d) * p.w_c.value().at(d, j);
      }
      c.at(t, j) = cc;
      for (std::size_t d = 0; d < dim; ++d) {
        const double a = -std::exp(p.a_log.value().at(d, j));
        const auto z2 = emo::ssm::zoh_discretize(a, delta, b);
        step.a_bar.at(d, j) = z2.a_bar;
        step.b_bar.at(d, j) = z2.b_bar;
      }
    }
    steps.push_back(std::move(step));
  }
  return emo::ssm::recurrence_naive(steps, c, x).y;
}

// All injective maps gt -> pred in lexicographic order; returns the first
// minimizer (strict improvement only, so ties keep the earliest).
inline std::vector<std::size_t> brute_force_assignment(const Tensor& cost, double* best_total) {
  const std::size_t n_pred = cost.dim(0), n_gt = cost.dim(1);
  std::vector<std::size_t> preds(n_pred);
  std::iota(preds.begin(), preds.end(), 0);
  std::vector<std::size_t> best;
  double best_cost = INFINITY;
  // Enumerate permutations of preds; the first n_gt entries form the map.
  // Different permutations with the same prefix repeat; skip them.
  std::vector<std::size_t> last;
  bool first = true;
  do {
    std::vector<std::size_t> prefix(preds.begin(), preds.begin() + static_cast<std::ptrdiff_t>(n_gt));
    if (!first && prefix == last) continue;
    first = false;
    last = prefix;
    double total = 0.0;
    for (std::size_t g = 0; g < n_gt; ++g) total += cost.at(prefix[g], g);
    if (total < best_cost) {
      best_cost = total;
      best = prefix;
    }
  } while (std::next_permutation(preds.begin(), preds.end()));
  if (best_total) *best_total = best_cost;
  return best;
}

}  // namespace emo::reference
