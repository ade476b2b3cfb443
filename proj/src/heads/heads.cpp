#include "emo/heads/heads.hpp"

#include <cmath>

#include "emo/block/block.hpp"
#include "emo/error.hpp"
#include "emo/numerics/ops.hpp"

namespace emo::heads {

HeadWeights HeadWeights::init(num::Rng& rng, std::size_t dim) {
  HeadWeights w;
  w.norm = nn::LayerNorm::init(dim);
  w.cls = nn::Linear::init(rng, dim, 1, 0.1);
  w.box = nn::Linear::init(rng, dim, 4, 0.1);
  w.j2d = nn::Linear::init(rng, dim, 2, 0.01);
  w.pose = nn::Linear::init(rng, dim, 3, 0.1);
  w.shape = nn::Linear::init(rng, dim, scene::kShapeDims, 0.1);
  w.trans = nn::Linear::init(rng, dim, 3, 0.1);
  return w;
}

nn::NamedParams HeadWeights::named_parameters(const std::string& prefix) const {
  nn::NamedParams p = norm.named_parameters(prefix + "norm.");
  nn::append(p, cls.named_parameters(prefix + "cls."));
  nn::append(p, box.named_parameters(prefix + "box."));
  nn::append(p, j2d.named_parameters(prefix + "j2d."));
  nn::append(p, pose.named_parameters(prefix + "pose."));
  nn::append(p, shape.named_parameters(prefix + "shape."));
  nn::append(p, trans.named_parameters(prefix + "trans."));
  return p;
}

StageOutput predict(const HeadConfig& cfg, const HeadWeights& w, const scene::BodyModel& body,
                    const scene::Camera& cam, const decoder::HumanQueries& q) {
  EMO_CHECK(q.n_joints == body.size(), ShapeError, "predict: queries and body model disagree on J");
  const Var depth = Var::constant(Tensor({1, 3}, std::vector<double>{0.0, 0.0, cfg.base_depth}));
  StageOutput out;
  for (std::size_t n = 0; n < q.n_persons; ++n) {
    const Var tokens = w.norm(num::slice_rows(q.q, n * q.n_joints, q.n_joints));
    const Var anchors = num::slice_rows(q.anchors, n * q.n_joints, q.n_joints);
    const Var root = num::slice_rows(tokens, 0, 1);
    const Var pooled = num::mean_rows(tokens);
    PersonOutput p;
    p.logit = w.cls(root);
    p.box = block::refine_anchors(num::slice_rows(anchors, 0, 1), w.box(root));
    p.j2d = num::add(num::slice_cols(anchors, 0, 2), w.j2d(tokens));
    p.pose = num::scale(num::tanh(w.pose(tokens)), cfg.pose_limit);
    p.shape = num::scale(num::tanh(w.shape(pooled)), cfg.shape_limit);
    p.trans = num::add(w.trans(pooled), depth);
    p.kp3d = scene::forward_kinematics(body, p.pose, p.shape, p.trans);
    p.kp2d = scene::project_normalized(p.kp3d, cam);
    out.push_back(std::move(p));
  }
  return out;
}

LossWeights LossWeights::scaled(double c) const {
  LossWeights w = *this;
  w.cls *= c;
  w.box *= c;
  w.j2d *= c;
  w.param *= c;
  w.kp3d *= c;
  w.kp2d *= c;
  w.select *= c;
  return w;
}

namespace {

double object_scale(const Tensor& box) { return std::sqrt(std::max(box[2] * box[3], 1e-6)); }

std::array<double, 4> as_box(const Tensor& t) { return {t[0], t[1], t[2], t[3]}; }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

PersonTerms person_terms(const PersonOutput& pred, const scene::PersonTruth& gt, const LossWeights& w) {
  PersonTerms t;
  t.box_l1 = l1_loss(pred.box, gt.box);
  t.giou = giou_loss(pred.box, gt.box);
  t.j2d_l1 = masked_l1_loss(pred.j2d, gt.j2d, gt.visible);
  t.oks = oks_loss(pred.j2d, gt.j2d, gt.visible, object_scale(gt.box), w.oks_kappa);
  const double count = static_cast<double>(gt.pose.size() + gt.shape.size() + gt.translation.size());
  const auto abs_sum = [](const Var& a, const Tensor& b) {
    return num::sum(num::abs(num::sub(a, Var::constant(b.reshaped(a.shape())))));
  };
  t.param = num::scale(num::add(num::add(abs_sum(pred.pose, gt.pose), abs_sum(pred.shape, gt.shape)),
                                abs_sum(pred.trans, gt.translation)),
                       1.0 / count);
  t.kp3d = masked_l1_loss(pred.kp3d, gt.j3d, gt.visible);
  t.kp2d = masked_l1_loss(pred.kp2d, gt.j2d, gt.visible);
  return t;
}

Tensor matching_cost(const StageOutput& preds, const std::vector<scene::PersonTruth>& targets, const LossWeights& w) {
  Tensor cost({preds.size(), targets.size()});
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double p = sigmoid(preds[i].logit.value().item());
    const double cls = focal_loss(p, 1, w.focal_alpha, w.focal_gamma) - focal_loss(p, 0, w.focal_alpha, w.focal_gamma);
    const auto box = as_box(preds[i].box.value());
    for (std::size_t k = 0; k < targets.size(); ++k) {
      const auto gt = as_box(targets[k].box);
      double l1 = 0.0;
      for (int c = 0; c < 4; ++c) l1 += std::abs(box[c] - gt[c]) / 4.0;
      cost.at(i, k) = cls + l1 + (1.0 - giou(cxcywh_to_xyxy(box), cxcywh_to_xyxy(gt)));
    }
  }
  return cost;
}

LossResult total_loss(const std::vector<StageOutput>& stages, const std::vector<scene::PersonTruth>& targets,
                      const LossWeights& w) {
  EMO_CHECK(!stages.empty(), ShapeError, "total_loss: no stages");
  const std::size_t n_pred = stages.back().size();
  for (const auto& s : stages)
    EMO_CHECK(s.size() == n_pred, ShapeError, "total_loss: stages disagree on the number of predictions");
  LossResult r;
  r.matching = hungarian_match(matching_cost(stages.back(), targets, w));
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, targets.size()));
  Tensor cls_target({n_pred});
  for (std::size_t p : r.matching.pred_of_gt) cls_target[p] = 1.0;

  std::vector<Var> stage_totals;
  for (const auto& stage : stages) {
    std::vector<Var> logits;
    for (const auto& p : stage) logits.push_back(p.logit);
    const Var cls = num::scale(focal_loss(num::concat_rows(logits), cls_target, w.focal_alpha, w.focal_gamma), norm);
    Var box = Var::constant(Tensor::scalar(0.0)), j2d = box, param = box, kp3d = box, kp2d = box;
    for (std::size_t k = 0; k < targets.size(); ++k) {
      const PersonTerms t = person_terms(stage[r.matching.pred_of_gt[k]], targets[k], w);
      box = num::add(box, num::add(t.box_l1, t.giou));
      j2d = num::add(j2d, num::add(t.j2d_l1, t.oks));
      param = num::add(param, t.param);
      kp3d = num::add(kp3d, t.kp3d);
      kp2d = num::add(kp2d, t.kp2d);
    }
    StageTerms st;
    st.cls = cls.value().item();
    const auto finish = [&](const Var& v, double& slot) {
      const Var n = num::scale(v, norm);
      slot = n.value().item();
      return n;
    };
    const Var nbox = finish(box, st.box), nj2d = finish(j2d, st.j2d), nparam = finish(param, st.param);
    const Var nkp3d = finish(kp3d, st.kp3d), nkp2d = finish(kp2d, st.kp2d);
    st.weighted = w.cls * st.cls + w.box * st.box + w.j2d * st.j2d + w.param * st.param + w.kp3d * st.kp3d +
                  w.kp2d * st.kp2d;
    stage_totals.push_back(num::add(
        num::add(num::add(num::scale(cls, w.cls), num::scale(nbox, w.box)),
                 num::add(num::scale(nj2d, w.j2d), num::scale(nparam, w.param))),
        num::add(num::scale(nkp3d, w.kp3d), num::scale(nkp2d, w.kp2d))));
    r.breakdown.stages.push_back(st);
    r.breakdown.total += st.weighted;
  }
  r.total = stage_totals[0];
  for (std::size_t s = 1; s < stage_totals.size(); ++s) r.total = num::add(r.total, stage_totals[s]);
  return r;
}

Tensor selection_targets(const decoder::StubEncoder& enc, const std::vector<scene::PersonTruth>& targets) {
  const auto& c = enc.config();
  Tensor t({c.n_patches(), 1});
  for (const auto& p : targets) {
    const auto gx = std::min(static_cast<std::size_t>(std::max(0.0, p.box[0]) * double(c.grid_w)), c.grid_w - 1);
    const auto gy = std::min(static_cast<std::size_t>(std::max(0.0, p.box[1]) * double(c.grid_h)), c.grid_h - 1);
    t[gy * c.grid_w + gx] = 1.0;
  }
  return t;
}

Var selection_loss(const Var& logits, const Tensor& targets, const LossWeights& w, std::size_t n_targets) {
  return num::scale(focal_loss(logits, targets, w.focal_alpha, w.focal_gamma),
                    1.0 / static_cast<double>(std::max<std::size_t>(1, n_targets)));
}

double DetectionCounts::f1() const {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 1.0;
}

DetectionCounts detection_counts(const StageOutput& preds, const std::vector<scene::PersonTruth>& targets,
                                 double threshold) {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (sigmoid(preds[i].logit.value().item()) >= threshold) pos.push_back(i);
  DetectionCounts c;
  if (!pos.empty() && !targets.empty()) {
    const bool flip = targets.size() > pos.size();
    Tensor cost(flip ? num::Shape{targets.size(), pos.size()} : num::Shape{pos.size(), targets.size()});
    std::vector<std::vector<double>> iou(pos.size(), std::vector<double>(targets.size()));
    for (std::size_t i = 0; i < pos.size(); ++i)
      for (std::size_t k = 0; k < targets.size(); ++k) {
        iou[i][k] = scene::box_iou(preds[pos[i]].box.value(), targets[k].box);
        (flip ? cost.at(k, i) : cost.at(i, k)) = 1.0 - iou[i][k];
      }
    const Assignment a = hungarian_match(cost);
    for (std::size_t col = 0; col < a.pred_of_gt.size(); ++col) {
      const std::size_t pi = flip ? col : a.pred_of_gt[col], tk = flip ? a.pred_of_gt[col] : col;
      if (iou[pi][tk] >= 0.5) ++c.tp;
    }
  }
  c.fp = pos.size() - c.tp;
  c.fn = targets.size() - c.tp;
  return c;
}

JointError joint_error(const StageOutput& preds, const std::vector<scene::PersonTruth>& targets, const LossWeights& w) {
  JointError e;
  if (targets.empty()) return e;
  const Assignment a = hungarian_match(matching_cost(preds, targets, w));
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const Tensor& pj = preds[a.pred_of_gt[k]].j2d.value();
    const auto& gt = targets[k];
    for (std::size_t j = 0; j < gt.j2d.rows(); ++j) {
      if (gt.visible[j] == 0.0) continue;
      e.sum += std::hypot(pj.at(j, 0) - gt.j2d.at(j, 0), pj.at(j, 1) - gt.j2d.at(j, 1));
      ++e.count;
    }
  }
  return e;
}

}  // namespace emo::heads
