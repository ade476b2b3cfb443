#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "emo/error.hpp"
#include "emo/numerics/grad_check.hpp"
#include "emo/numerics/ops.hpp"
#include "emo/scene/kinematics.hpp"
#include "emo/scene/scene.hpp"

using namespace emo;
using num::Rng;
using num::Tensor;
using num::Var;
using scene::Mat3;

namespace {

std::array<double, 3> apply(const Mat3& r, double x, double y, double z) {
  return {r[0] * x + r[1] * y + r[2] * z, r[3] * x + r[4] * y + r[5] * z, r[6] * x + r[7] * y + r[8] * z};
}

// Inverse Rodrigues for rotations below pi.
std::array<double, 3> matrix_log(const Mat3& r) {
  const double c = std::clamp((r[0] + r[4] + r[8] - 1.0) / 2.0, -1.0, 1.0);
  const double t = std::acos(c);
  const double k = t < 1e-12 ? 0.5 : t / (2.0 * std::sin(t));
  return {k * (r[7] - r[5]), k * (r[2] - r[6]), k * (r[3] - r[1])};
}

Mat3 mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int m = 0; m < 3; ++m) c[i * 3 + j] += a[i * 3 + m] * b[m * 3 + j];
  return c;
}

scene::SceneConfig quiet_config() {
  scene::SceneConfig cfg;
  cfg.pixel_noise = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("axis-angle rotation") {
  const Mat3 id = scene::axis_angle_to_matrix({0, 0, 0});
  for (int e = 0; e < 9; ++e) CHECK(id[e] == (e % 4 == 0 ? 1.0 : 0.0));
  // Quarter turn about z maps x to y.
  const auto v = apply(scene::axis_angle_to_matrix({0, 0, M_PI / 2}), 1, 0, 0);
  CHECK(v[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(v[1] == doctest::Approx(1.0).epsilon(1e-15));

  Rng rng(1);
  for (double scale : {1e-9, 1e-5, 0.3, 2.0}) {
    const std::array<double, 3> w = {scale * rng.normal(), scale * rng.normal(), scale * rng.normal()};
    std::array<Mat3, 3> jac;
    const Mat3 r = scene::axis_angle_to_matrix(w, &jac);
    const Mat3 rtr = mul(r, {r[0], r[3], r[6], r[1], r[4], r[7], r[2], r[5], r[8]});
    for (int e = 0; e < 9; ++e) CHECK(rtr[e] == doctest::Approx(e % 4 == 0 ? 1.0 : 0.0).epsilon(1e-14));
    for (int i = 0; i < 3; ++i) {
      auto wp = w, wm = w;
      wp[i] += 1e-6;
      wm[i] -= 1e-6;
      const Mat3 rp = scene::axis_angle_to_matrix(wp), rm = scene::axis_angle_to_matrix(wm);
      for (int e = 0; e < 9; ++e) CHECK(jac[i][e] == doctest::Approx((rp[e] - rm[e]) / 2e-6).epsilon(1e-6));
    }
  }
}

TEST_CASE("forward kinematics") {
  const auto body = scene::BodyModel::standard();
  const std::size_t j = body.size();
  const Tensor t = Tensor::vector({0.3, -0.2, 6.0});
  const Tensor zero_shape({4});
  SUBCASE("rest pose stacks bone offsets") {
    const Tensor j3d = scene::forward_kinematics(body, Tensor({j, 3}), zero_shape, t);
    for (std::size_t i = 1; i < j; ++i) {
      const auto p = static_cast<std::size_t>(body.topo.parent[i]);
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(j3d.at(i, c) == doctest::Approx(j3d.at(p, c) + body.base_length[i] * body.direction.at(i, c)));
    }
    for (std::size_t c = 0; c < 3; ++c) CHECK(j3d.at(0, c) == t[c]);
  }
  SUBCASE("root rotation moves the body rigidly") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor pose = rng.uniform_tensor({j, 3}, -0.7, 0.7);
      const std::array<double, 3> w = {rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6)};
      const Mat3 rot = scene::axis_angle_to_matrix(w);
      Tensor rotated = pose;
      const auto root = matrix_log(mul(rot, scene::axis_angle_to_matrix({pose.at(0, 0), pose.at(0, 1), pose.at(0, 2)})));
      for (std::size_t c = 0; c < 3; ++c) rotated.at(0, c) = root[c];
      const Tensor a = scene::forward_kinematics(body, pose, zero_shape, t);
      const Tensor b = scene::forward_kinematics(body, rotated, zero_shape, t);
      for (std::size_t i = 0; i < j; ++i) {
        const auto e = apply(rot, a.at(i, 0) - t[0], a.at(i, 1) - t[1], a.at(i, 2) - t[2]);
        for (std::size_t c = 0; c < 3; ++c) CHECK(b.at(i, c) == doctest::Approx(e[c] + t[c]).epsilon(1e-12));
      }
    }
  }
  SUBCASE("doubling bone lengths doubles root-relative distances") {
    auto twice = body;
    for (double& l : twice.base_length.data()) l *= 2.0;
    const Tensor pose = Rng(3).uniform_tensor({j, 3}, -0.7, 0.7);
    const Tensor shape = Tensor::vector({0.3, -0.5, 0.2, 0.9});
    const Tensor a = scene::forward_kinematics(body, pose, shape, t);
    const Tensor b = scene::forward_kinematics(twice, pose, shape, t);
    for (std::size_t i = 0; i < j; ++i)
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(b.at(i, c) - t[c] == doctest::Approx(2.0 * (a.at(i, c) - t[c])).epsilon(1e-12));
  }
  CHECK_THROWS_AS(scene::forward_kinematics(body, Tensor({3, 3}), zero_shape, t), ShapeError);
}

TEST_CASE("kinematics and projection gradients match finite differences") {
  for (const auto& body : {scene::BodyModel::standard(),
                           scene::BodyModel::for_topology(scan::SkeletonTopology::from_parents({-1, 0, 1, 1, 0}))}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(40 + seed);
      const Var pose = Var::parameter(rng.uniform_tensor({body.size(), 3}, -0.8, 0.8));
      const Var shape = Var::parameter(rng.uniform_tensor({4}, -1, 1));
      const Var t = Var::parameter(Tensor::vector({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(5, 7)}));
      const Var r3 = Var::constant(rng.normal_tensor({body.size(), 3}, 1.0));
      const Var r2 = Var::constant(rng.normal_tensor({body.size(), 2}, 1.0));
      const scene::Camera cam;
      const auto loss = [&] {
        const Var j3d = scene::forward_kinematics(body, pose, shape, t);
        return num::add(num::sum(num::mul(j3d, r3)), num::sum(num::mul(scene::project_normalized(j3d, cam), r2)));
      };
      CHECK(num::grad_check_params(loss, {pose, shape, t}, 1e-4).max_rel_error <= 1e-4);
    }
  }
}

TEST_CASE("pinhole projection") {
  scene::Camera cam;
  const auto on_axis = scene::project(Tensor::from_rows({{0, 0, 4}}), cam);
  CHECK(on_axis.uv.at(0, 0) == cam.cx);
  CHECK(on_axis.uv.at(0, 1) == cam.cy);
  const auto near = scene::project(Tensor::from_rows({{0.5, -0.3, 5}}), cam);
  const auto far = scene::project(Tensor::from_rows({{0.5, -0.3, 10}}), cam);
  CHECK(far.uv.at(0, 0) - cam.cx == doctest::Approx((near.uv.at(0, 0) - cam.cx) / 2));
  CHECK(far.uv.at(0, 1) - cam.cy == doctest::Approx((near.uv.at(0, 1) - cam.cy) / 2));

  scene::Camera tiny{2.0, 0.0, 0.0, 10.0, 10.0, 0.1};
  const auto p = scene::project(Tensor::from_rows({{1, 0, 2}, {1, 0, -2}, {-1, 0, 2}}), tiny);
  CHECK(p.uv.at(0, 0) == 1.0);
  CHECK(p.uv.at(0, 1) == 0.0);
  CHECK(p.visible == std::vector<bool>{true, false, false});
}

TEST_CASE("scene generation") {
  const scene::SceneGenerator gen(quiet_config(), scene::BodyModel::standard());
  SUBCASE("same seed gives identical samples") {
    auto noisy = quiet_config();
    noisy.pixel_noise = 0.05;
    noisy.joint_dropout = 0.2;
    const scene::SceneGenerator g2(noisy, scene::BodyModel::standard());
    const auto a = g2.generate(17), b = g2.generate(17);
    CHECK(a.features == b.features);
    CHECK(a.pixels == b.pixels);
    REQUIRE(a.persons.size() == b.persons.size());
    for (std::size_t i = 0; i < a.persons.size(); ++i) CHECK(a.persons[i].j3d == b.persons[i].j3d);
    CHECK_FALSE(g2.generate(18).features == a.features);
  }
  SUBCASE("boxes tightly bound the visible joints") {
    auto one = quiet_config();
    one.max_persons = 1;
    const scene::SceneGenerator g1(one, scene::BodyModel::standard());
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto s = g1.generate(seed);
      REQUIRE(s.persons.size() == 1);
      const auto& p = s.persons[0];
      double lo_x = 1, hi_x = 0, lo_y = 1, hi_y = 0, mx = 0, my = 0, n = 0;
      for (std::size_t j = 0; j < 23; ++j) {
        if (p.visible[j] == 0.0) continue;
        lo_x = std::min(lo_x, p.j2d.at(j, 0));
        hi_x = std::max(hi_x, p.j2d.at(j, 0));
        lo_y = std::min(lo_y, p.j2d.at(j, 1));
        hi_y = std::max(hi_y, p.j2d.at(j, 1));
        mx += p.j2d.at(j, 0);
        my += p.j2d.at(j, 1);
        n += 1;
      }
      REQUIRE(n > 0);
      const double px = 1.0 / 128;
      CHECK(std::abs(p.box[0] - p.box[2] / 2 - lo_x) <= px);
      CHECK(std::abs(p.box[0] + p.box[2] / 2 - hi_x) <= px);
      CHECK(std::abs(p.box[1] - p.box[3] / 2 - lo_y) <= px);
      CHECK(std::abs(p.box[1] + p.box[3] / 2 - hi_y) <= px);
      CHECK(std::abs(mx / n - p.box[0]) <= p.box[2] / 2);
      CHECK(std::abs(my / n - p.box[1]) <= p.box[3] / 2);
    }
  }
  SUBCASE("persons do not overlap heavily") {
    auto crowd = quiet_config();
    crowd.max_persons = 4;
    const scene::SceneGenerator g4(crowd, scene::BodyModel::standard());
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const auto s = g4.generate(seed);
      for (std::size_t a = 0; a < s.persons.size(); ++a)
        for (std::size_t b = a + 1; b < s.persons.size(); ++b)
          CHECK(scene::box_iou(s.persons[a].box, s.persons[b].box) <= 0.5);
    }
  }
  SUBCASE("sampled parameters respect their ranges") {
    for (std::uint64_t seed = 0; seed < 30; ++seed)
      for (const auto& p : gen.generate(seed).persons) {
        for (std::size_t j = 0; j < 23; ++j) {
          const double n = std::hypot(p.pose.at(j, 0), p.pose.at(j, 1), p.pose.at(j, 2));
          CHECK(n < M_PI);
        }
        CHECK((p.translation[2] >= 5.0 && p.translation[2] <= 7.0));
        for (double v : p.box.data()) CHECK((v >= 0.0 && v <= 1.0));
      }
  }
  SUBCASE("dataset round trip") {
    const auto data = scene::make_dataset(gen, 4, 9);
    const auto stem = std::filesystem::temp_directory_path() / "emo_test_data" / "split";
    scene::save_dataset(data, stem);
    const auto back = scene::load_dataset(stem);
    REQUIRE(back.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(back[i].seed == data[i].seed);
      CHECK(back[i].features == data[i].features);
      REQUIRE(back[i].persons.size() == data[i].persons.size());
      for (std::size_t k = 0; k < data[i].persons.size(); ++k) {
        CHECK(back[i].persons[k].j2d == data[i].persons[k].j2d);
        CHECK(back[i].persons[k].visible == data[i].persons[k].visible);
      }
    }
  }
  auto bad = quiet_config();
  bad.encoder.channels = 5;
  CHECK_THROWS_AS(scene::SceneGenerator(bad, scene::BodyModel::standard()), ConfigError);
}
