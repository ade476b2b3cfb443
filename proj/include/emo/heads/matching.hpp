#pragma once

#include <vector>

#include "emo/numerics/tensor.hpp"

namespace emo::heads {

struct Assignment {
  std::vector<std::size_t> pred_of_gt;  // gt k is matched to prediction pred_of_gt[k]
  double total = 0.0;
};

// Minimum-cost injective map from ground truths (columns) to predictions
// (rows) of cost (n_pred, n_gt). Among optimal maps the lexicographically
// smallest pred_of_gt is returned. Throws ShapeError when n_gt > n_pred and
// DomainError on non-finite costs.
Assignment hungarian_match(const num::Tensor& cost);

}  // namespace emo::heads
