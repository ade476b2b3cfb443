#include "emo/heads/losses.hpp"

#include <algorithm>
#include <cmath>

#include "emo/error.hpp"
#include "emo/numerics/ops.hpp"

namespace emo::heads {

double focal_loss(double p, int y, double alpha, double gamma) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  if (y == 1) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

BoxXyxy cxcywh_to_xyxy(const std::array<double, 4>& b) {
  return {b[0] - 0.5 * b[2], b[1] - 0.5 * b[3], b[0] + 0.5 * b[2], b[1] + 0.5 * b[3]};
}

double giou(const BoxXyxy& a, const BoxXyxy& b) {
  EMO_CHECK(a[2] >= a[0] && a[3] >= a[1] && b[2] >= b[0] && b[3] >= b[1], DomainError,
            "giou: boxes need non-negative width and height");
  const double area_a = (a[2] - a[0]) * (a[3] - a[1]), area_b = (b[2] - b[0]) * (b[3] - b[1]);
  if (area_a == 0.0 && area_b == 0.0 && a == b) return 0.0;
  const double iw = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double ih = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = iw * ih, uni = area_a + area_b - inter;
  const double hull = (std::max(a[2], b[2]) - std::min(a[0], b[0])) * (std::max(a[3], b[3]) - std::min(a[1], b[1]));
  const double iou = uni > 0.0 ? inter / uni : 0.0;
  return hull > 0.0 ? iou - (hull - uni) / hull : iou;
}

OksResult oks_loss(const Tensor& pred, const Tensor& gt, const Tensor& visible, double s, double kappa) {
  EMO_CHECK(pred.same_shape(gt) && pred.cols() == 2 && visible.size() == pred.rows(), ShapeError,
            "oks_loss: pred and gt must be (J, 2) with J visibility flags");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < pred.rows(); ++j) {
    if (visible[j] == 0.0) continue;
    const double dx = pred.at(j, 0) - gt.at(j, 0), dy = pred.at(j, 1) - gt.at(j, 1);
    sum += std::exp(-(dx * dx + dy * dy) / (2.0 * s * s * kappa * kappa));
    ++n;
  }
  if (n == 0) return {0.0, true};
  return {1.0 - sum / static_cast<double>(n), false};
}

Var focal_loss(const Var& logits, const Tensor& targets, double alpha, double gamma) {
  EMO_CHECK(logits.value().size() == targets.size(), ShapeError, "focal_loss: one target per logit");
  const Var& x = logits;
  const Tensor flat_targets = targets.reshaped(logits.shape());
  // ln p = -softplus(-x), ln(1 - p) = -softplus(x)
  const Var sp_pos = num::softplus(x), sp_neg = num::softplus(num::scale(x, -1.0));
  Tensor wpos(logits.shape()), wneg(logits.shape());
  for (std::size_t i = 0; i < targets.size(); ++i) (flat_targets[i] > 0.5 ? wpos : wneg)[i] = 1.0;
  // y=1: alpha (1-p)^gamma softplus(-x); y=0: (1-alpha) p^gamma softplus(x)
  const Var pos = num::mul(num::exp(num::scale(sp_pos, -gamma)), sp_neg);
  const Var neg = num::mul(num::exp(num::scale(sp_neg, -gamma)), sp_pos);
  return num::add(num::scale(num::sum(num::mul(pos, Var::constant(wpos))), alpha),
                  num::scale(num::sum(num::mul(neg, Var::constant(wneg))), 1.0 - alpha));
}

Var giou_loss(const Var& box, const Tensor& target) {
  EMO_CHECK(box.value().size() == 4 && target.size() == 4, ShapeError, "giou_loss: boxes have 4 coordinates");
  const auto col = [&](std::size_t i) { return num::slice_cols(box, i, 1); };
  const auto cst = [](double v) { return Var::constant(Tensor({1, 1}, v)); };
  const Var half_w = num::scale(col(2), 0.5), half_h = num::scale(col(3), 0.5);
  const Var x1 = num::sub(col(0), half_w), x2 = num::add(col(0), half_w);
  const Var y1 = num::sub(col(1), half_h), y2 = num::add(col(1), half_h);
  const auto t = cxcywh_to_xyxy({target[0], target[1], target[2], target[3]});
  const Var zero = cst(0.0);
  const Var iw = num::maximum(num::sub(num::minimum(x2, cst(t[2])), num::maximum(x1, cst(t[0]))), zero);
  const Var ih = num::maximum(num::sub(num::minimum(y2, cst(t[3])), num::maximum(y1, cst(t[1]))), zero);
  const Var inter = num::mul(iw, ih);
  const double area_t = (t[2] - t[0]) * (t[3] - t[1]);
  const Var uni = num::sub(num::add_scalar(num::mul(col(2), col(3)), area_t), inter);
  const Var hull = num::mul(num::sub(num::maximum(x2, cst(t[2])), num::minimum(x1, cst(t[0]))),
                            num::sub(num::maximum(y2, cst(t[3])), num::minimum(y1, cst(t[1]))));
  const Var g = num::sub(num::div(inter, uni), num::div(num::sub(hull, uni), hull));
  return num::sum(num::sub(cst(1.0), g));
}

Var oks_loss(const Var& pred, const Tensor& gt, const Tensor& visible, double s, double kappa) {
  EMO_CHECK(pred.value().rows() == gt.rows() && pred.value().cols() == 2 && visible.size() == gt.rows(), ShapeError,
            "oks_loss: pred and gt must be (J, 2) with J visibility flags");
  std::vector<std::size_t> rows;
  for (std::size_t j = 0; j < visible.size(); ++j)
    if (visible[j] != 0.0) rows.push_back(j);
  if (rows.empty()) return Var::constant(Tensor::scalar(0.0));
  const Var d2 = num::sum_cols(num::square(num::sub(pred, Var::constant(gt))));
  const Var sim = num::exp(num::scale(num::gather_rows(d2, rows), -1.0 / (2.0 * s * s * kappa * kappa)));
  return num::add_scalar(num::scale(num::mean(sim), -1.0), 1.0);
}

Var l1_loss(const Var& pred, const Tensor& target) {
  EMO_CHECK(pred.value().size() == target.size(), ShapeError, "l1_loss: sizes differ");
  return num::mean(num::abs(num::sub(pred, Var::constant(target.reshaped(pred.shape())))));
}

Var masked_l1_loss(const Var& pred, const Tensor& target, const Tensor& visible) {
  EMO_CHECK(pred.shape() == target.shape() && visible.size() == target.rows(), ShapeError,
            "masked_l1_loss: pred and target must match with one flag per row");
  std::vector<std::size_t> rows;
  for (std::size_t j = 0; j < visible.size(); ++j)
    if (visible[j] != 0.0) rows.push_back(j);
  if (rows.empty()) return Var::constant(Tensor::scalar(0.0));
  return num::mean(num::abs(num::gather_rows(num::sub(pred, Var::constant(target)), rows)));
}

}  // namespace emo::heads
