#pragma once

#include <array>
#include <vector>

#include "emo/numerics/autograd.hpp"

namespace emo::heads {

using num::Tensor;
using num::Var;

inline constexpr double kProbClamp = 1e-12;

// y = 1: -alpha (1 - p)^gamma ln p;  y = 0: -(1 - alpha) p^gamma ln(1 - p).
// p is clamped to [1e-12, 1 - 1e-12].
double focal_loss(double p, int y, double alpha, double gamma);

using BoxXyxy = std::array<double, 4>;
BoxXyxy cxcywh_to_xyxy(const std::array<double, 4>& b);

// IoU minus the fraction of the enclosing box not covered by the union.
// Two zero-area boxes give 0 when they coincide; otherwise IoU is taken as
// 0 when the union is empty, and so is the penalty when the hull is empty.
double giou(const BoxXyxy& a, const BoxXyxy& b);

struct OksResult {
  double loss = 0.0;
  bool no_visible = false;
};

// 1 - mean over visible joints of exp(-d^2 / (2 s^2 kappa^2)). pred and gt
// are (J, 2); visible holds 0/1. With no visible joints the loss is 0 and
// no_visible is set.
OksResult oks_loss(const Tensor& pred, const Tensor& gt, const Tensor& visible, double s, double kappa);

// Differentiable forms.

// Sum over entries of the focal loss of sigmoid(logits) against 0/1 targets,
// computed from logits so no clamping is needed.
Var focal_loss(const Var& logits, const Tensor& targets, double alpha, double gamma);
// 1 - giou for a predicted (4) cx, cy, w, h box against a fixed target.
Var giou_loss(const Var& box, const Tensor& target);
// Zero (and not differentiable) when no joint is visible.
Var oks_loss(const Var& pred, const Tensor& gt, const Tensor& visible, double s, double kappa);
// Mean absolute difference over all entries.
Var l1_loss(const Var& pred, const Tensor& target);
// Mean absolute difference over the rows with visible[r] != 0; zero if none.
Var masked_l1_loss(const Var& pred, const Tensor& target, const Tensor& visible);

}  // namespace emo::heads
