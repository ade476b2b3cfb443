#include "emo/heads/matching.hpp"

#include <cmath>
#include <limits>

#include "emo/error.hpp"

namespace emo::heads {

namespace {

// Shortest augmenting path Hungarian method with potentials, O(r^2 c).
// cost(r, c) for r rows <= c columns; returns the column of every row.
std::vector<std::size_t> solve(const std::vector<std::vector<double>>& cost) {
  const std::size_t r = cost.size(), c = r ? cost[0].size() : 0;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(r + 1, 0.0), v(c + 1, 0.0);
  std::vector<std::size_t> match(c + 1, 0), way(c + 1, 0);  // 1-based, 0 = free
  for (std::size_t i = 1; i <= r; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(c + 1, kInf);
    std::vector<bool> used(c + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= c; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= c; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of_row(r);
  for (std::size_t j = 1; j <= c; ++j)
    if (match[j] != 0) col_of_row[match[j] - 1] = j - 1;
  return col_of_row;
}

double optimum(const std::vector<std::vector<double>>& cost) {
  if (cost.empty()) return 0.0;
  const auto cols = solve(cost);
  double total = 0.0;
  for (std::size_t i = 0; i < cost.size(); ++i) total += cost[i][cols[i]];
  return total;
}

}  // namespace

Assignment hungarian_match(const num::Tensor& cost) {
  EMO_CHECK(cost.rank() == 2, ShapeError, "hungarian_match: cost must be (n_pred, n_gt)");
  const std::size_t n_pred = cost.dim(0), n_gt = cost.dim(1);
  EMO_CHECK(n_gt <= n_pred, ShapeError,
            "hungarian_match: " + std::to_string(n_gt) + " targets exceed " + std::to_string(n_pred) + " predictions");
  double scale = 1.0;
  for (double x : cost.data()) {
    EMO_CHECK(std::isfinite(x), DomainError, "hungarian_match: non-finite cost");
    scale += std::abs(x);
  }
  // Rows are ground truths so the solver's rows <= columns precondition holds.
  std::vector<std::vector<double>> rows(n_gt, std::vector<double>(n_pred));
  for (std::size_t k = 0; k < n_gt; ++k)
    for (std::size_t p = 0; p < n_pred; ++p) rows[k][p] = cost.at(p, k);
  const double best = optimum(rows);
  const double tol = 1e-12 * scale;

  // Fix ground truths in order to the smallest prediction that still admits
  // an optimal completion.
  Assignment a;
  std::vector<bool> taken(n_pred, false);
  double fixed = 0.0;
  for (std::size_t k = 0; k < n_gt; ++k) {
    bool placed = false;
    for (std::size_t p = 0; p < n_pred && !placed; ++p) {
      if (taken[p]) continue;
      std::vector<std::vector<double>> rest;
      for (std::size_t k2 = k + 1; k2 < n_gt; ++k2) {
        std::vector<double> row;
        for (std::size_t p2 = 0; p2 < n_pred; ++p2)
          if (!taken[p2] && p2 != p) row.push_back(rows[k2][p2]);
        rest.push_back(std::move(row));
      }
      if (fixed + rows[k][p] + optimum(rest) <= best + tol) {
        taken[p] = true;
        fixed += rows[k][p];
        a.pred_of_gt.push_back(p);
        placed = true;
      }
    }
    EMO_CHECK(placed, DomainError, "hungarian_match: lost the optimum while fixing ground truth " + std::to_string(k));
  }
  for (std::size_t k = 0; k < n_gt; ++k) a.total += cost.at(a.pred_of_gt[k], k);
  return a;
}

}  // namespace emo::heads
