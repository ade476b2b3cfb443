#pragma once

#include <cstdint>
#include <filesystem>
#include <numbers>
#include <vector>

#include "emo/decoder/encoder.hpp"
#include "emo/scene/kinematics.hpp"

namespace emo::scene {

struct PersonTruth {
  Tensor box;          // (4) normalized cx, cy, w, h of the visible joints
  Tensor j2d;          // (J, 2) normalized image coordinates
  Tensor j3d;          // (J, 3) camera frame, meters
  Tensor pose;         // (J, 3) axis-angle
  Tensor shape;        // (kShapeDims)
  Tensor translation;  // (3)
  Tensor visible;      // (J) 1 or 0
};

struct SceneConfig {
  std::size_t min_persons = 1;
  std::size_t max_persons = 2;
  Camera camera;
  decoder::EncoderConfig encoder;  // channels must be J + 1
  double pose_range = std::numbers::pi / 4;  // per axis-angle component
  double depth_min = 5.0;
  double depth_max = 7.0;
  double splat_sigma = 0.6;  // in render pixels
  double pixel_noise = 0.02;
  double joint_dropout = 0.0;  // probability a joint is left out of the image
};

struct SceneSample {
  std::uint64_t seed = 0;
  Tensor pixels;    // (render pixels, J + 1): joint channels then a body-center channel
  Tensor features;  // (patches, D) encoder output
  std::vector<PersonTruth> persons;
};

// Persons occupy distinct cells of a square grid over the frame, so their
// boxes stay apart; poses, shapes and depths are drawn uniformly.
class SceneGenerator {
 public:
  SceneGenerator(SceneConfig cfg, BodyModel body);

  const SceneConfig& config() const { return cfg_; }
  const BodyModel& body() const { return body_; }
  const decoder::StubEncoder& encoder() const { return encoder_; }

  SceneSample generate(std::uint64_t seed) const;
  PersonTruth make_person(const Tensor& pose, const Tensor& shape, const Tensor& translation) const;
  // Renders the joint splats of `persons` and encodes them.
  Tensor render(const std::vector<PersonTruth>& persons, num::Rng& rng) const;

 private:
  SceneConfig cfg_;
  BodyModel body_;
  decoder::StubEncoder encoder_;
};

std::vector<SceneSample> make_dataset(const SceneGenerator& gen, std::size_t count, std::uint64_t base_seed);
void save_dataset(const std::vector<SceneSample>& samples, const std::filesystem::path& stem);
std::vector<SceneSample> load_dataset(const std::filesystem::path& stem);

// IoU of two (cx, cy, w, h) boxes.
double box_iou(const Tensor& a, const Tensor& b);

}  // namespace emo::scene
