#include "emo/scene/scene.hpp"

#include <algorithm>
#include <cmath>

#include "emo/error.hpp"
#include "emo/io/archive.hpp"

namespace emo::scene {

SceneGenerator::SceneGenerator(SceneConfig cfg, BodyModel body)
    : cfg_(std::move(cfg)), body_(std::move(body)), encoder_(cfg_.encoder) {
  EMO_CHECK(cfg_.encoder.channels == body_.size() + 1, ConfigError,
            "scene: encoder channels must be J + 1 = " + std::to_string(body_.size() + 1));
  EMO_CHECK(cfg_.min_persons >= 1 && cfg_.min_persons <= cfg_.max_persons, ConfigError,
            "scene: need 1 <= min_persons <= max_persons");
  EMO_CHECK(cfg_.depth_min > cfg_.camera.z_near && cfg_.depth_min <= cfg_.depth_max, ConfigError,
            "scene: depth range must lie in front of the camera");
}

PersonTruth SceneGenerator::make_person(const Tensor& pose, const Tensor& shape, const Tensor& translation) const {
  PersonTruth p{Tensor({4}), Tensor(), forward_kinematics(body_, pose, shape, translation), pose, shape, translation,
                Tensor({body_.size()})};
  const Camera& cam = cfg_.camera;
  const Projection proj = project(p.j3d, cam);
  p.j2d = Tensor({body_.size(), 2});
  double lo_x = 1.0, hi_x = 0.0, lo_y = 1.0, hi_y = 0.0;
  for (std::size_t j = 0; j < body_.size(); ++j) {
    const double x = proj.uv.at(j, 0) / cam.width, y = proj.uv.at(j, 1) / cam.height;
    p.j2d.at(j, 0) = x;
    p.j2d.at(j, 1) = y;
    if (!proj.visible[j]) continue;
    p.visible[j] = 1.0;
    lo_x = std::min(lo_x, x);
    hi_x = std::max(hi_x, x);
    lo_y = std::min(lo_y, y);
    hi_y = std::max(hi_y, y);
  }
  if (hi_x >= lo_x) p.box = Tensor::vector({0.5 * (lo_x + hi_x), 0.5 * (lo_y + hi_y), hi_x - lo_x, hi_y - lo_y});
  return p;
}

Tensor SceneGenerator::render(const std::vector<PersonTruth>& persons, num::Rng& rng) const {
  const auto& ec = cfg_.encoder;
  const std::size_t w = ec.grid_w * ec.sub, h = ec.grid_h * ec.sub, jn = body_.size();
  Tensor pixels({w * h, jn + 1});
  const double inv2s2 = 1.0 / (2.0 * cfg_.splat_sigma * cfg_.splat_sigma);
  const auto splat = [&](double nx, double ny, std::size_t channel, double scale) {
    const double px = nx * static_cast<double>(w) - 0.5, py = ny * static_cast<double>(h) - 0.5;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = static_cast<double>(x) - px, dy = static_cast<double>(y) - py;
        pixels.at(y * w + x, channel) += std::exp(-(dx * dx + dy * dy) * inv2s2 / (scale * scale));
      }
  };
  for (const auto& p : persons) {
    for (std::size_t j = 0; j < jn; ++j) {
      const bool dropped = cfg_.joint_dropout > 0.0 && rng.uniform() < cfg_.joint_dropout;
      if (p.visible[j] > 0.0 && !dropped) splat(p.j2d.at(j, 0), p.j2d.at(j, 1), j, 1.0);
    }
    if (p.box.size() == 4) splat(p.box[0], p.box[1], jn, 1.5);
  }
  if (cfg_.pixel_noise > 0.0)
    for (double& v : pixels.data()) v += cfg_.pixel_noise * rng.normal();
  return pixels;
}

SceneSample SceneGenerator::generate(std::uint64_t seed) const {
  num::Rng rng(seed);
  const std::size_t count = cfg_.min_persons + rng.below(cfg_.max_persons - cfg_.min_persons + 1);
  const auto cells_per_side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(cfg_.max_persons))));
  const auto cells = rng.permutation(cells_per_side * cells_per_side);
  const Camera& cam = cfg_.camera;
  SceneSample s;
  s.seed = seed;
  for (std::size_t i = 0; i < count; ++i) {
    const double cell = 1.0 / static_cast<double>(cells_per_side);
    const double u = (static_cast<double>(cells[i] % cells_per_side) + 0.5 + rng.uniform(-0.15, 0.15)) * cell;
    const double v = (static_cast<double>(cells[i] / cells_per_side) + 0.5 + rng.uniform(-0.15, 0.15)) * cell;
    const double z = rng.uniform(cfg_.depth_min, cfg_.depth_max);
    const Tensor translation =
        Tensor::vector({(u * cam.width - cam.cx) * z / cam.focal, (v * cam.height - cam.cy) * z / cam.focal, z});
    const Tensor pose = rng.uniform_tensor({body_.size(), 3}, -cfg_.pose_range, cfg_.pose_range);
    const Tensor shape = rng.uniform_tensor({kShapeDims}, -1.0, 1.0);
    s.persons.push_back(make_person(pose, shape, translation));
  }
  s.pixels = render(s.persons, rng);
  s.features = encoder_.encode(s.pixels);
  return s;
}

std::vector<SceneSample> make_dataset(const SceneGenerator& gen, std::size_t count, std::uint64_t base_seed) {
  std::vector<SceneSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen.generate(num::Rng::mix(base_seed + i)));
  return out;
}

void save_dataset(const std::vector<SceneSample>& samples, const std::filesystem::path& stem) {
  io::Archive a;
  a.add("count", Tensor::scalar(static_cast<double>(samples.size())));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const std::string p = "scene" + std::to_string(i) + ".";
    // Seeds are stored as two 32-bit halves to stay exact in doubles.
    a.add(p + "meta", Tensor::vector({static_cast<double>(s.seed >> 32), static_cast<double>(s.seed & 0xffffffffu),
                                      static_cast<double>(s.persons.size())}));
    a.add(p + "pixels", s.pixels);
    a.add(p + "features", s.features);
    for (std::size_t k = 0; k < s.persons.size(); ++k) {
      const auto& t = s.persons[k];
      const std::string q = p + "person" + std::to_string(k) + ".";
      a.add(q + "box", t.box);
      a.add(q + "j2d", t.j2d);
      a.add(q + "j3d", t.j3d);
      a.add(q + "pose", t.pose);
      a.add(q + "shape", t.shape);
      a.add(q + "translation", t.translation);
      a.add(q + "visible", t.visible);
    }
  }
  a.save(stem);
}

std::vector<SceneSample> load_dataset(const std::filesystem::path& stem) {
  const io::Archive a = io::Archive::load(stem);
  const auto count = static_cast<std::size_t>(a.get("count").item());
  std::vector<SceneSample> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::string p = "scene" + std::to_string(i) + ".";
    const Tensor& meta = a.get(p + "meta");
    auto& s = out[i];
    s.seed = (static_cast<std::uint64_t>(meta[0]) << 32) | static_cast<std::uint64_t>(meta[1]);
    s.pixels = a.get(p + "pixels");
    s.features = a.get(p + "features");
    for (std::size_t k = 0; k < static_cast<std::size_t>(meta[2]); ++k) {
      const std::string q = p + "person" + std::to_string(k) + ".";
      s.persons.push_back({a.get(q + "box"), a.get(q + "j2d"), a.get(q + "j3d"), a.get(q + "pose"),
                           a.get(q + "shape"), a.get(q + "translation"), a.get(q + "visible")});
    }
  }
  return out;
}

double box_iou(const Tensor& a, const Tensor& b) {
  const double ix = std::max(0.0, std::min(a[0] + a[2] / 2, b[0] + b[2] / 2) - std::max(a[0] - a[2] / 2, b[0] - b[2] / 2));
  const double iy = std::max(0.0, std::min(a[1] + a[3] / 2, b[1] + b[3] / 2) - std::max(a[1] - a[3] / 2, b[1] - b[3] / 2));
  const double inter = ix * iy, uni = a[2] * a[3] + b[2] * b[3] - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace emo::scene
