#pragma once

#include <vector>

#include "emo/decoder/decoder.hpp"
#include "emo/heads/losses.hpp"
#include "emo/heads/matching.hpp"
#include "emo/scene/scene.hpp"

namespace emo::heads {

struct HeadConfig {
  double pose_limit = 1.5;   // |axis-angle component| bound via tanh
  double shape_limit = 2.0;  // |shape coefficient| bound via tanh
  double base_depth = 6.0;   // translation z offset added to the head output
};

// Heads read each person's J tokens after a shared layer norm: class and
// box from the root token, 2-D joints and pose from every joint token, shape
// and translation from the mean token.
struct HeadWeights {
  nn::LayerNorm norm;
  nn::Linear cls;    // D -> 1
  nn::Linear box;    // D -> 4, offset in logit space
  nn::Linear j2d;    // D -> 2, offset from the joint anchor center
  nn::Linear pose;   // D -> 3
  nn::Linear shape;  // D -> kShapeDims
  nn::Linear trans;  // D -> 3

  static HeadWeights init(num::Rng& rng, std::size_t dim);
  nn::NamedParams named_parameters(const std::string& prefix = "head.") const;
};

struct PersonOutput {
  Var logit;  // (1, 1)
  Var box;    // (1, 4)
  Var j2d;    // (J, 2)
  Var pose;   // (J, 3)
  Var shape;  // (1, kShapeDims)
  Var trans;  // (1, 3)
  Var kp3d;   // (J, 3) forward kinematics of pose, shape, trans
  Var kp2d;   // (J, 2) normalized projection of kp3d
};
using StageOutput = std::vector<PersonOutput>;

StageOutput predict(const HeadConfig& cfg, const HeadWeights& w, const scene::BodyModel& body,
                    const scene::Camera& cam, const decoder::HumanQueries& q);

struct LossWeights {
  double cls = 1.0;
  double box = 1.0;
  double j2d = 1.0;
  double param = 1.0;
  double kp3d = 1.0;
  double kp2d = 1.0;
  double select = 1.0;  // patch-score supervision for token selection
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double oks_kappa = 0.1;

  LossWeights scaled(double c) const;
};

// Unweighted terms of one person pair, each a scalar Var.
struct PersonTerms {
  Var box_l1, giou, j2d_l1, oks, param, kp3d, kp2d;
};
PersonTerms person_terms(const PersonOutput& pred, const scene::PersonTruth& gt, const LossWeights& w);

struct StageTerms {
  double cls = 0.0, box = 0.0, j2d = 0.0, param = 0.0, kp3d = 0.0, kp2d = 0.0;
  double weighted = 0.0;
};

struct LossBreakdown {
  std::vector<StageTerms> stages;
  double select = 0.0;
  double total = 0.0;  // sum of stage weighted terms plus weighted select
};

struct LossResult {
  Var total;
  LossBreakdown breakdown;
  Assignment matching;
};

// Class focal cost + box L1 + (1 - GIoU) between every prediction and target.
Tensor matching_cost(const StageOutput& preds, const std::vector<scene::PersonTruth>& targets, const LossWeights& w);

// Matching from the last stage, reused for every stage. Per stage:
//   cls * focal (all predictions; unmatched ones have target 0)
//   + box * (L1 + 1 - GIoU) + j2d * (L1 + 1 - OKS) + param * L1
//   + kp3d * L1 + kp2d * L1       (matched pairs, visible joints only)
// normalized by max(1, number of targets).
LossResult total_loss(const std::vector<StageOutput>& stages, const std::vector<scene::PersonTruth>& targets,
                      const LossWeights& w);

// Patch targets for token selection: 1 for the patch holding each target
// box center.
Tensor selection_targets(const decoder::StubEncoder& enc, const std::vector<scene::PersonTruth>& targets);
Var selection_loss(const Var& logits, const Tensor& targets, const LossWeights& w, std::size_t n_targets);

struct DetectionCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
  double f1() const;
};

// Predictions with score >= threshold, matched to targets on 1 - IoU; a pair
// counts as a hit when IoU >= 0.5.
DetectionCounts detection_counts(const StageOutput& preds, const std::vector<scene::PersonTruth>& targets,
                                 double threshold = 0.5);

// Sum and count of 2-D joint errors (normalized units) over visible joints of
// matched pairs, using the loss matching.
struct JointError {
  double sum = 0.0;
  std::size_t count = 0;
  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
};
JointError joint_error(const StageOutput& preds, const std::vector<scene::PersonTruth>& targets, const LossWeights& w);

}  // namespace emo::heads
