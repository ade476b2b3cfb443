#include "emo/scene/kinematics.hpp"

#include <cmath>

#include "emo/error.hpp"

namespace emo::scene {

namespace {

// Value with derivatives along the three axis-angle components.
struct Dual {
  double v = 0.0;
  std::array<double, 3> d{};
};

Dual operator+(const Dual& a, const Dual& b) { return {a.v + b.v, {a.d[0] + b.d[0], a.d[1] + b.d[1], a.d[2] + b.d[2]}}; }
Dual operator*(const Dual& a, const Dual& b) {
  Dual r{a.v * b.v, {}};
  for (int i = 0; i < 3; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
Dual operator*(double s, const Dual& a) { return {s * a.v, {s * a.d[0], s * a.d[1], s * a.d[2]}}; }
Dual operator+(double s, const Dual& a) { return {s + a.v, a.d}; }
// f(a) with f'(a) given.
Dual chain(const Dual& a, double f, double df) { return {f, {df * a.d[0], df * a.d[1], df * a.d[2]}}; }

}  // namespace

Mat3 axis_angle_to_matrix(const std::array<double, 3>& w, std::array<Mat3, 3>* jac) {
  std::array<Dual, 3> x;
  for (int i = 0; i < 3; ++i) {
    x[i].v = w[i];
    x[i].d[i] = 1.0;
  }
  const Dual t2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
  Dual a, b;  // R = I + a K + b K^2 with K the cross-product matrix of w
  if (t2.v < 1e-8) {
    a = 1.0 + (-1.0 / 6.0) * t2 + (1.0 / 120.0) * (t2 * t2);
    b = 0.5 + (-1.0 / 24.0) * t2 + (1.0 / 720.0) * (t2 * t2);
  } else {
    const double t = std::sqrt(t2.v), s = std::sin(t), c = std::cos(t);
    // a = sin t / t, b = (1 - cos t) / t^2, differentiated through t^2.
    const double da = (c / t - s / t2.v) / (2.0 * t);
    const double db = (s / t) / (2.0 * t2.v) - (1.0 - c) / (t2.v * t2.v);
    a = chain(t2, s / t, da);
    b = chain(t2, (1.0 - c) / t2.v, db);
  }
  const std::array<Dual, 9> k = {Dual{}, -1.0 * x[2], x[1], x[2], Dual{}, -1.0 * x[0], -1.0 * x[1], x[0], Dual{}};
  std::array<Dual, 9> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      Dual k2;
      for (int m = 0; m < 3; ++m) k2 = k2 + k[i * 3 + m] * k[m * 3 + j];
      r[i * 3 + j] = (i == j ? 1.0 : 0.0) + (a * k[i * 3 + j] + b * k2);
    }
  Mat3 out;
  for (int e = 0; e < 9; ++e) {
    out[e] = r[e].v;
    if (jac)
      for (int i = 0; i < 3; ++i) (*jac)[i][e] = r[e].d[i];
  }
  return out;
}

namespace {

std::array<double, 3> normalized(double x, double y, double z) {
  const double n = std::sqrt(x * x + y * y + z * z);
  return {x / n, y / n, z / n};
}

Mat3 mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int m = 0; m < 3; ++m) c[i * 3 + j] += a[i * 3 + m] * b[m * 3 + j];
  return c;
}

std::array<double, 3> mul(const Mat3& a, const std::array<double, 3>& v) {
  return {a[0] * v[0] + a[1] * v[1] + a[2] * v[2], a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
          a[6] * v[0] + a[7] * v[1] + a[8] * v[2]};
}

}  // namespace

BodyModel BodyModel::standard() {
  struct Bone {
    const char* name;
    std::array<double, 3> dir;
    double length;
    std::size_t group;
  };
  // Person facing the camera: their left is +x in the image, up is -y.
  static const Bone bones[] = {
      {"pelvis", {0, -1, 0}, 0.0, 3},        {"spine", {0, -1, 0}, 0.25, 3},
      {"neck", {0, -1, 0}, 0.25, 3},         {"head", {0, -1, 0}, 0.12, 3},
      {"l_hip", {1, 0.3, 0}, 0.12, 1},       {"r_hip", {-1, 0.3, 0}, 0.12, 1},
      {"l_knee", {0, 1, 0}, 0.42, 1},        {"r_knee", {0, 1, 0}, 0.42, 1},
      {"l_ankle", {0, 1, 0}, 0.40, 1},       {"r_ankle", {0, 1, 0}, 0.40, 1},
      {"l_shoulder", {1, 0.2, 0}, 0.17, 2},  {"r_shoulder", {-1, 0.2, 0}, 0.17, 2},
      {"l_elbow", {0.2, 1, 0}, 0.28, 2},     {"r_elbow", {-0.2, 1, 0}, 0.28, 2},
      {"l_wrist", {0, 1, 0}, 0.25, 2},       {"r_wrist", {0, 1, 0}, 0.25, 2},
      {"nose", {0, 0.3, -1}, 0.10, 3},       {"l_index", {0, 1, 0}, 0.08, 2},
      {"r_index", {0, 1, 0}, 0.08, 2},       {"l_thumb", {-0.5, 1, -0.5}, 0.06, 2},
      {"r_thumb", {0.5, 1, -0.5}, 0.06, 2},  {"l_eye", {1, -1, 0}, 0.04, 3},
      {"r_eye", {-1, -1, 0}, 0.04, 3},
  };
  BodyModel b;
  b.topo = scan::default_topology();
  const std::size_t j = b.topo.size();
  b.direction = Tensor({j, 3});
  b.base_length = Tensor({j});
  for (std::size_t i = 0; i < j; ++i) {
    EMO_CHECK(b.topo.names[i] == bones[i].name, TopologyError, "body model: joint table out of sync");
    const auto d = normalized(bones[i].dir[0], bones[i].dir[1], bones[i].dir[2]);
    for (int c = 0; c < 3; ++c) b.direction.at(i, c) = d[c];
    b.base_length[i] = bones[i].length;
    b.group.push_back(bones[i].group);
  }
  return b;
}

BodyModel BodyModel::for_topology(const scan::SkeletonTopology& topo) {
  topo.validate();
  BodyModel b;
  b.topo = topo;
  const std::size_t j = topo.size();
  b.direction = Tensor({j, 3});
  b.base_length = Tensor({j}, 0.2);
  b.base_length[0] = 0.0;
  b.group.assign(j, 3);
  const auto children = topo.children();
  std::vector<std::size_t> depth(j, 0);
  for (std::size_t i = 1; i < j; ++i) depth[i] = depth[static_cast<std::size_t>(topo.parent[i])] + 1;
  for (std::size_t p = 0; p < j; ++p)
    for (std::size_t r = 0; r < children[p].size(); ++r) {
      const std::size_t c = children[p][r];
      const double angle = 0.7 * (static_cast<double>(r) - 0.5 * static_cast<double>(children[p].size() - 1));
      const auto d = normalized(std::sin(angle), depth[c] % 2 ? 1.0 : -1.0, 0.2 * std::cos(angle));
      for (int k = 0; k < 3; ++k) b.direction.at(c, k) = d[k];
      b.group[c] = 1 + c % 3;
    }
  return b;
}

std::vector<double> BodyModel::bone_lengths(std::span<const double> shape) const {
  EMO_CHECK(shape.size() == kShapeDims, ShapeError, "body model: shape must have 4 coefficients");
  std::vector<double> len(size(), 0.0);
  for (std::size_t i = 1; i < size(); ++i) len[i] = base_length[i] * (1.0 + shape_scale * (shape[0] + shape[group[i]]));
  return len;
}

namespace {

struct FkState {
  std::vector<Mat3> rot, global;
  std::vector<std::array<Mat3, 3>> jac;
  std::vector<std::array<double, 3>> bone;  // length * direction
  std::vector<double> length;
  Tensor j3d;
};

FkState run_fk(const BodyModel& body, const Tensor& pose, const Tensor& shape, const Tensor& translation,
               bool with_jac) {
  const std::size_t j = body.size();
  EMO_CHECK(pose.size() == 3 * j && pose.cols() == 3, ShapeError,
            "forward_kinematics: pose must be (" + std::to_string(j) + ", 3)");
  EMO_CHECK(translation.size() == 3, ShapeError, "forward_kinematics: translation must have 3 entries");
  FkState s;
  s.length = body.bone_lengths(shape.data());
  s.rot.resize(j);
  s.global.resize(j);
  s.bone.resize(j);
  if (with_jac) s.jac.resize(j);
  s.j3d = Tensor({j, 3});
  for (std::size_t i = 0; i < j; ++i) {
    s.rot[i] = axis_angle_to_matrix({pose.at(i, 0), pose.at(i, 1), pose.at(i, 2)}, with_jac ? &s.jac[i] : nullptr);
    for (int c = 0; c < 3; ++c) s.bone[i][c] = s.length[i] * body.direction.at(i, c);
    if (i == 0) {
      s.global[0] = s.rot[0];
      for (int c = 0; c < 3; ++c) s.j3d.at(0, c) = translation[c];
      continue;
    }
    const auto p = static_cast<std::size_t>(body.topo.parent[i]);
    s.global[i] = mul(s.global[p], s.rot[i]);
    const auto off = mul(s.global[p], s.bone[i]);
    for (int c = 0; c < 3; ++c) s.j3d.at(i, c) = s.j3d.at(p, c) + off[c];
  }
  return s;
}

}  // namespace

Tensor forward_kinematics(const BodyModel& body, const Tensor& pose, const Tensor& shape, const Tensor& translation) {
  return run_fk(body, pose, shape, translation, false).j3d;
}

Var forward_kinematics(const BodyModel& body, const Var& pose, const Var& shape, const Var& translation) {
  auto st = std::make_shared<FkState>(run_fk(body, pose.value(), shape.value(), translation.value(), true));
  Tensor out = st->j3d;
  return num::make_op(std::move(out), {pose, shape, translation}, [body, st, pose, shape, translation](const num::Node& self) {
    const std::size_t j = body.size();
    std::vector<std::array<double, 3>> gp(j);
    std::vector<Mat3> gg(j, Mat3{});
    for (std::size_t i = 0; i < j; ++i)
      for (int c = 0; c < 3; ++c) gp[i][c] = self.grad.at(i, c);
    Tensor gpose(pose.shape()), gshape(shape.shape()), gt(translation.shape());
    const auto pose_grad = [&](std::size_t i, const Mat3& g_rot) {
      for (int a = 0; a < 3; ++a) {
        double s = 0.0;
        for (int e = 0; e < 9; ++e) s += g_rot[e] * st->jac[i][a][e];
        gpose.at(i, a) = s;
      }
    };
    for (std::size_t i = j - 1; i >= 1; --i) {
      const auto p = static_cast<std::size_t>(body.topo.parent[i]);
      const Mat3& gpar = st->global[p];
      for (int c = 0; c < 3; ++c) gp[p][c] += gp[i][c];
      // off = G_p * bone
      double glen = 0.0;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
          gg[p][r * 3 + c] += gp[i][r] * st->bone[i][c];
          glen += gpar[r * 3 + c] * gp[i][r] * body.direction.at(i, c);
        }
      const double dl = body.base_length[i] * body.shape_scale;
      gshape[0] += glen * dl;
      gshape[body.group[i]] += glen * dl;
      // G_i = G_p * R_i
      Mat3 grot{};
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
          for (int m = 0; m < 3; ++m) {
            gg[p][r * 3 + m] += gg[i][r * 3 + c] * st->rot[i][m * 3 + c];
            grot[m * 3 + c] += gpar[r * 3 + m] * gg[i][r * 3 + c];
          }
      pose_grad(i, grot);
    }
    pose_grad(0, gg[0]);
    for (int c = 0; c < 3; ++c) gt[c] = gp[0][c];
    pose.accumulate_grad(gpose);
    shape.accumulate_grad(gshape);
    translation.accumulate_grad(gt);
  });
}

Projection project(const Tensor& j3d, const Camera& cam) {
  const std::size_t j = j3d.rows();
  Projection p{Tensor({j, 2}), std::vector<bool>(j, false)};
  for (std::size_t i = 0; i < j; ++i) {
    const double z = j3d.at(i, 2);
    if (z <= cam.z_near) continue;
    const double u = cam.focal * j3d.at(i, 0) / z + cam.cx, v = cam.focal * j3d.at(i, 1) / z + cam.cy;
    p.uv.at(i, 0) = u;
    p.uv.at(i, 1) = v;
    p.visible[i] = u >= 0.0 && u < cam.width && v >= 0.0 && v < cam.height;
  }
  return p;
}

Var project_normalized(const Var& j3d, const Camera& cam) {
  const Tensor& x = j3d.value();
  EMO_CHECK(x.rank() == 2 && x.cols() == 3, ShapeError, "project: points must be (J, 3)");
  const std::size_t j = x.rows();
  Tensor out({j, 2});
  for (std::size_t i = 0; i < j; ++i) {
    const double z = std::max(x.at(i, 2), cam.z_near);
    out.at(i, 0) = (cam.focal * x.at(i, 0) / z + cam.cx) / cam.width;
    out.at(i, 1) = (cam.focal * x.at(i, 1) / z + cam.cy) / cam.height;
  }
  return num::make_op(std::move(out), {j3d}, [j3d, cam](const num::Node& self) {
    const Tensor& x = j3d.value();
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const bool clamped = x.at(i, 2) < cam.z_near;
      const double z = clamped ? cam.z_near : x.at(i, 2);
      const double gu = self.grad.at(i, 0) * cam.focal / cam.width, gv = self.grad.at(i, 1) * cam.focal / cam.height;
      g.at(i, 0) = gu / z;
      g.at(i, 1) = gv / z;
      if (!clamped) g.at(i, 2) = -(gu * x.at(i, 0) + gv * x.at(i, 1)) / (z * z);
    }
    j3d.accumulate_grad(g);
  });
}

}  // namespace emo::scene
