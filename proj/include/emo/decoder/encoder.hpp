#pragma once

#include <cstdint>

#include "emo/nn/layers.hpp"

namespace emo::decoder {

using num::Tensor;

struct EncoderConfig {
  std::size_t grid_h = 8;  // patches per column
  std::size_t grid_w = 8;  // patches per row
  std::size_t sub = 2;     // pixels per patch side
  std::size_t channels = 24;
  std::size_t dim = 32;
  std::uint64_t seed = 1234;
  double content_gain = 2.0;  // embedding scale relative to unit-variance init

  std::size_t n_patches() const { return grid_h * grid_w; }
  std::size_t pixels() const { return grid_h * sub * grid_w * sub; }
};

// Fixed, untrained stand-in for an image backbone: patchify, random linear
// embedding, additive 2-D sinusoidal patch position, then two residual
// token-wise MLP layers. Weights depend only on the config.
class StubEncoder {
 public:
  explicit StubEncoder(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }
  // pixels: (grid_h*sub * grid_w*sub, channels), row-major over the pixel
  // grid. Returns (n_patches, dim), patch p at grid row p / grid_w.
  Tensor encode(const Tensor& pixels) const;
  // Normalized (x, y) center of patch p.
  std::pair<double, double> patch_center(std::size_t p) const;

 private:
  EncoderConfig cfg_;
  nn::Linear embed_;
  Tensor position_;
  nn::LayerNorm ln_[2];
  nn::Mlp mix_[2];
};

}  // namespace emo::decoder
