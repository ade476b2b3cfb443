#pragma once

#include <array>

#include "emo/numerics/autograd.hpp"
#include "emo/scan/topology.hpp"

namespace emo::scene {

using num::Tensor;
using num::Var;

inline constexpr std::size_t kShapeDims = 4;

using Mat3 = std::array<double, 9>;  // row-major

// Rodrigues rotation for an axis-angle vector; a series in theta^2 is used
// near zero. `jac` (optional) receives dR/dw_i for i = 0..2.
Mat3 axis_angle_to_matrix(const std::array<double, 3>& w, std::array<Mat3, 3>* jac = nullptr);

// Articulated body: per joint, a unit bone direction in the parent frame
// and a base length. Shape coefficient k scales the bones in group k:
// length_j = base_j * (1 + scale * (shape_0 + shape_{group_j})) where group 0
// is the whole body and groups 1..3 are legs, arms, and torso with head.
struct BodyModel {
  scan::SkeletonTopology topo;
  Tensor direction;  // (J, 3), row 0 unused
  Tensor base_length;  // (J), entry 0 unused
  std::vector<std::size_t> group;  // shape group per joint, 1..3
  double shape_scale = 0.1;

  // Anthropometric layout for the default 23-joint tree, in a camera-aligned
  // frame (x right, y down, z away from the camera).
  static BodyModel standard();
  // Deterministic fan-out layout for any valid tree; used by tests.
  static BodyModel for_topology(const scan::SkeletonTopology& topo);

  std::size_t size() const { return topo.size(); }
  // Positive bone lengths for a shape vector (kShapeDims).
  std::vector<double> bone_lengths(std::span<const double> shape) const;
};

// Root at `translation`; p_j = p_parent + G_parent * (length_j * direction_j)
// with G_j = G_parent * R(pose_j) and G_root = R(pose_root).
Tensor forward_kinematics(const BodyModel& body, const Tensor& pose, const Tensor& shape, const Tensor& translation);
// Differentiable in pose (J, 3), shape (kShapeDims) and translation (3).
Var forward_kinematics(const BodyModel& body, const Var& pose, const Var& shape, const Var& translation);

struct Camera {
  double focal = 160.0;
  double cx = 64.0;
  double cy = 64.0;
  double width = 128.0;
  double height = 128.0;
  double z_near = 0.1;
};

struct Projection {
  Tensor uv;          // (J, 2) pixels
  std::vector<bool> visible;
};

// u = f x / z + cx, v = f y / z + cy. A joint is visible when z > z_near and
// the pixel lies inside the frame; invisible joints behind the camera get uv 0.
Projection project(const Tensor& j3d, const Camera& cam);
// Pixel coordinates divided by the frame size, differentiable in j3d.
// Depths are clamped below at z_near.
Var project_normalized(const Var& j3d, const Camera& cam);

}  // namespace emo::scene
