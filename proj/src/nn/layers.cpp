#include "emo/nn/layers.hpp"

#include <cmath>

#include "emo/numerics/ops.hpp"

namespace emo::nn {

Linear Linear::init(num::Rng& rng, std::size_t in, std::size_t out, double gain) {
  return {Var::parameter(rng.normal_tensor({in, out}, gain / std::sqrt(static_cast<double>(in)))),
          Var::parameter(Tensor({out}))};
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return {Var::parameter(Tensor({in, out})), Var::parameter(Tensor({out}))};
}

Var Linear::operator()(const Var& x) const { return num::linear(x, w, b); }

NamedParams Linear::named_parameters(const std::string& prefix) const {
  return {{prefix + "w", w}, {prefix + "b", b}};
}

Mlp Mlp::init(num::Rng& rng, std::size_t in, std::size_t hidden, std::size_t out, bool zero_output) {
  Mlp m;
  m.fc1 = Linear::init(rng, in, hidden);
  m.fc2 = zero_output ? Linear::zeros(hidden, out) : Linear::init(rng, hidden, out);
  return m;
}

Var Mlp::operator()(const Var& x) const { return fc2(num::silu(fc1(x))); }

NamedParams Mlp::named_parameters(const std::string& prefix) const {
  auto p = fc1.named_parameters(prefix + "fc1.");
  append(p, fc2.named_parameters(prefix + "fc2."));
  return p;
}

LayerNorm LayerNorm::init(std::size_t dim, double gamma) {
  return {Var::parameter(Tensor({dim}, gamma)), Var::parameter(Tensor({dim}))};
}

Var LayerNorm::operator()(const Var& x) const { return num::layer_norm(x, gamma, beta); }

NamedParams LayerNorm::named_parameters(const std::string& prefix) const {
  return {{prefix + "gamma", gamma}, {prefix + "beta", beta}};
}

}  // namespace emo::nn
