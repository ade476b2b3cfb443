#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "emo/decoder/decoder.hpp"
#include "emo/heads/heads.hpp"
#include "emo/scene/scene.hpp"

namespace emo::train {

using num::Tensor;
using num::Var;

struct OptimizerConfig {
  double step_size = 0.05;
  double clip_norm = 1.0;
  std::size_t steps = 300;
  std::size_t batch_size = 4;
  std::uint64_t seed = 7;
};

struct DataConfig {
  std::size_t train_size = 64;
  std::size_t test_size = 32;
  std::uint64_t seed = 100;
};

struct BenchConfig {
  std::vector<std::size_t> m_grid{256, 512, 1024, 2048, 4096};
  std::size_t reps = 5;
  std::size_t warmups = 2;
  std::size_t dim = 64;
  std::size_t joints = 16;   // chain skeleton length; M / joints persons
  std::size_t patches = 64;  // memory rows
  double min_trial_ms = 20.0;  // inner repetitions grow until a trial lasts this long
};

struct AblationConfig {
  std::vector<std::string> variants;  // empty: every variant
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

// Everything a run depends on. Serializes to a `key = value` text file;
// parse(to_text()) reproduces the config exactly.
struct RunConfig {
  decoder::DecoderConfig decoder;
  heads::HeadConfig head;
  heads::LossWeights loss;
  scene::SceneConfig scene;
  OptimizerConfig optimizer;
  DataConfig data;
  BenchConfig bench;
  AblationConfig ablation;

  // Defaults sized for single-core training runs.
  static RunConfig defaults();
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_text() const;
  // Fills derived fields (encoder width and channels) and checks consistency.
  void finalize();
};

}  // namespace emo::train
