#include "emo/decoder/encoder.hpp"

#include <cmath>
#include <numbers>

#include "emo/error.hpp"
#include "emo/numerics/ops.hpp"

namespace emo::decoder {

StubEncoder::StubEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  EMO_CHECK(cfg.dim % 4 == 0 && cfg.grid_h > 0 && cfg.grid_w > 0 && cfg.sub > 0 && cfg.channels > 0, ConfigError,
            "encoder: dim must be a multiple of 4 and the grid non-empty");
  num::Rng rng(cfg.seed);
  const std::size_t patch_in = cfg.sub * cfg.sub * cfg.channels;
  embed_ = nn::Linear::init(rng, patch_in, cfg.dim, cfg.content_gain);
  for (int i = 0; i < 2; ++i) {
    ln_[i] = nn::LayerNorm::init(cfg.dim);
    mix_[i] = nn::Mlp::init(rng, cfg.dim, 2 * cfg.dim, cfg.dim, false);
  }
  // Half the features encode x, half y; sin/cos pairs at frequencies pi 2^i,
  // so the slowest pair is monotone across the frame.
  position_ = Tensor({cfg.n_patches(), cfg.dim});
  const std::size_t half = cfg.dim / 2;
  for (std::size_t p = 0; p < cfg.n_patches(); ++p) {
    const auto [x, y] = patch_center(p);
    for (std::size_t i = 0; i < half / 2; ++i) {
      const double f = std::numbers::pi * std::ldexp(1.0, static_cast<int>(i));
      position_.at(p, 2 * i) = std::sin(x * f);
      position_.at(p, 2 * i + 1) = std::cos(x * f);
      position_.at(p, half + 2 * i) = std::sin(y * f);
      position_.at(p, half + 2 * i + 1) = std::cos(y * f);
    }
  }
}

std::pair<double, double> StubEncoder::patch_center(std::size_t p) const {
  return {(static_cast<double>(p % cfg_.grid_w) + 0.5) / static_cast<double>(cfg_.grid_w),
          (static_cast<double>(p / cfg_.grid_w) + 0.5) / static_cast<double>(cfg_.grid_h)};
}

Tensor StubEncoder::encode(const Tensor& pixels) const {
  EMO_CHECK(pixels.rank() == 2 && pixels.rows() == cfg_.pixels() && pixels.cols() == cfg_.channels, ShapeError,
            "encoder: expected pixels (" + std::to_string(cfg_.pixels()) + ", " + std::to_string(cfg_.channels) +
                "), got " + num::shape_str(pixels.shape()));
  num::Tape::Pause pause;
  const std::size_t s = cfg_.sub, width = cfg_.grid_w * s, c = cfg_.channels;
  Tensor patches({cfg_.n_patches(), s * s * c});
  for (std::size_t p = 0; p < cfg_.n_patches(); ++p) {
    const std::size_t py = p / cfg_.grid_w, px = p % cfg_.grid_w;
    for (std::size_t dy = 0; dy < s; ++dy)
      for (std::size_t dx = 0; dx < s; ++dx) {
        const std::size_t pix = (py * s + dy) * width + px * s + dx;
        for (std::size_t k = 0; k < c; ++k) patches.at(p, (dy * s + dx) * c + k) = pixels.at(pix, k);
      }
  }
  num::Var x = num::add(embed_(num::Var::constant(patches)), num::Var::constant(position_));
  for (int i = 0; i < 2; ++i) x = num::add(x, mix_[i](ln_[i](x)));
  return x.value();
}

}  // namespace emo::decoder
