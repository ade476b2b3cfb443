#pragma once

#include <string>
#include <utility>
#include <vector>

#include "emo/numerics/autograd.hpp"
#include "emo/numerics/rng.hpp"

namespace emo::nn {

using num::Tensor;
using num::Var;

using NamedParams = std::vector<std::pair<std::string, Var>>;

inline void append(NamedParams& dst, NamedParams src) {
  for (auto& p : src) dst.push_back(std::move(p));
}

struct Linear {
  Var w;  // (in, out)
  Var b;  // (out)

  // Gaussian weights with stddev gain / sqrt(in), zero bias.
  static Linear init(num::Rng& rng, std::size_t in, std::size_t out, double gain = 1.0);
  static Linear zeros(std::size_t in, std::size_t out);
  Var operator()(const Var& x) const;
  NamedParams named_parameters(const std::string& prefix) const;
};

// fc2(silu(fc1(x)))
struct Mlp {
  Linear fc1;
  Linear fc2;

  static Mlp init(num::Rng& rng, std::size_t in, std::size_t hidden, std::size_t out, bool zero_output);
  Var operator()(const Var& x) const;
  NamedParams named_parameters(const std::string& prefix) const;
};

struct LayerNorm {
  Var gamma;
  Var beta;

  static LayerNorm init(std::size_t dim, double gamma = 1.0);
  Var operator()(const Var& x) const;
  NamedParams named_parameters(const std::string& prefix) const;
};

}  // namespace emo::nn
