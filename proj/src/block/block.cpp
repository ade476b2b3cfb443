#include "emo/block/block.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "emo/error.hpp"
#include "emo/numerics/flops.hpp"
#include "emo/numerics/ops.hpp"

namespace emo::block {

namespace cost = num::cost;

std::string to_string(MixerKind kind) {
  switch (kind) {
    case MixerKind::kUnidirectional: return "uni";
    case MixerKind::kBidirectional: return "bi";
    case MixerKind::kLocalUnidirectional: return "local_uni";
    case MixerKind::kLocalBidirectional: return "local_bi";
    case MixerKind::kSelfAttention: return "attention";
    case MixerKind::kTokenMlp: return "mlp";
  }
  return "?";
}

MixerKind parse_mixer_kind(const std::string& name) {
  for (auto k : {MixerKind::kUnidirectional, MixerKind::kBidirectional, MixerKind::kLocalUnidirectional,
                 MixerKind::kLocalBidirectional, MixerKind::kSelfAttention, MixerKind::kTokenMlp})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown mixer kind '" + name + "' (uni, bi, local_uni, local_bi, attention, mlp)");
}

bool is_local(MixerKind kind) {
  return kind == MixerKind::kLocalUnidirectional || kind == MixerKind::kLocalBidirectional;
}

namespace {

bool uses_scan(MixerKind k) { return k != MixerKind::kSelfAttention && k != MixerKind::kTokenMlp; }

void check_config(const BlockConfig& cfg) {
  EMO_CHECK(cfg.dim % 8 == 0 && cfg.dim > 0, ConfigError,
            "block: dim must be a positive multiple of 8, got " + std::to_string(cfg.dim));
  EMO_CHECK(cfg.conv_width % 2 == 1, ConfigError, "block: conv_width must be odd");
  if (is_local(cfg.mixer)) cfg.topo.validate();
}

}  // namespace

BlockWeights BlockWeights::init(num::Rng& rng, const BlockConfig& cfg) {
  check_config(cfg);
  const std::size_t d = cfg.dim;
  BlockWeights w;
  w.mixer = cfg.mixer;
  w.ln1 = nn::LayerNorm::init(d);
  w.ln2 = nn::LayerNorm::init(d, cfg.zero_init_outputs ? 0.0 : 1.0);
  w.ln3 = nn::LayerNorm::init(d);
  if (cfg.mixer != MixerKind::kTokenMlp) {
    w.dw_kernel = Var::parameter(rng.normal_tensor({cfg.conv_width, d}, 1.0 / std::sqrt(double(cfg.conv_width))));
    w.dw_bias = Var::parameter(Tensor({d}));
  }
  if (uses_scan(cfg.mixer)) {
    w.ssm.push_back(ssm::SsmParams::init(rng, d, cfg.n_state));
    if (cfg.mixer == MixerKind::kBidirectional) w.ssm.push_back(ssm::SsmParams::init(rng, d, cfg.n_state));
  } else if (cfg.mixer == MixerKind::kSelfAttention) {
    w.attn = attn::AttentionWeights::init(rng, d, cfg.attn_heads);
  } else {
    w.token_mlp = nn::Mlp::init(rng, d, d, d, false);
  }
  w.mlp_main = nn::Mlp::init(rng, d, 4 * d, d, cfg.zero_init_outputs);
  w.mlp_pe = nn::Mlp::init(rng, d, d, d, false);
  w.mlp_offset = nn::Linear::zeros(d, 4);
  return w;
}

nn::NamedParams BlockWeights::named_parameters(const std::string& prefix) const {
  nn::NamedParams p = ln1.named_parameters(prefix + "ln1.");
  nn::append(p, ln2.named_parameters(prefix + "ln2."));
  nn::append(p, ln3.named_parameters(prefix + "ln3."));
  if (mixer != MixerKind::kTokenMlp) {
    p.emplace_back(prefix + "dw.kernel", dw_kernel);
    p.emplace_back(prefix + "dw.bias", dw_bias);
  }
  for (std::size_t i = 0; i < ssm.size(); ++i)
    nn::append(p, ssm[i].named_parameters(prefix + "ssm" + std::to_string(i) + "."));
  if (mixer == MixerKind::kSelfAttention) nn::append(p, attn.named_parameters(prefix + "attn."));
  if (mixer == MixerKind::kTokenMlp) nn::append(p, token_mlp.named_parameters(prefix + "token_mlp."));
  nn::append(p, mlp_main.named_parameters(prefix + "mlp_main."));
  nn::append(p, mlp_pe.named_parameters(prefix + "mlp_pe."));
  nn::append(p, mlp_offset.named_parameters(prefix + "mlp_offset."));
  return p;
}

namespace {

struct PeLayout {
  std::size_t quarter;
  std::vector<double> freq;  // angular frequency per sin/cos pair
};

PeLayout pe_layout(std::size_t dim) {
  EMO_CHECK(dim % 8 == 0 && dim > 0, ConfigError,
            "sinusoidal_pe: dim must be a positive multiple of 8, got " + std::to_string(dim));
  PeLayout l{dim / 4, {}};
  for (std::size_t i = 0; i < l.quarter / 2; ++i)
    l.freq.push_back(2.0 * std::numbers::pi *
                     std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(l.quarter)));
  return l;
}

}  // namespace

Tensor sinusoidal_pe(const Tensor& boxes, std::size_t dim) {
  const PeLayout l = pe_layout(dim);
  EMO_CHECK(boxes.cols() == 4, ShapeError, "sinusoidal_pe: boxes must be (tokens, 4)");
  const std::size_t n = boxes.rows();
  Tensor out({n, dim});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 0; i < l.freq.size(); ++i) {
        const double arg = boxes.at(r, c) * l.freq[i];
        out.at(r, c * l.quarter + 2 * i) = std::sin(arg);
        out.at(r, c * l.quarter + 2 * i + 1) = std::cos(arg);
      }
  num::FlopCounter::add(cost::kElementwise * n * dim);
  return out;
}

Var sinusoidal_pe(const Var& boxes, std::size_t dim) {
  Tensor out = sinusoidal_pe(boxes.value(), dim);
  return num::make_op(std::move(out), {boxes}, [boxes, dim](const num::Node& self) {
    const PeLayout l = pe_layout(dim);
    const Tensor& b = boxes.value();
    Tensor g(b.shape());
    for (std::size_t r = 0; r < b.rows(); ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < l.freq.size(); ++i) {
          const std::size_t col = c * l.quarter + 2 * i;
          // d sin = f cos, d cos = -f sin
          s += l.freq[i] * (self.grad.at(r, col) * self.value.at(r, col + 1) -
                            self.grad.at(r, col + 1) * self.value.at(r, col));
        }
        g.at(r, c) = s;
      }
    boxes.accumulate_grad(g);
  });
}

namespace {

constexpr double kAnchorEps = 1e-6;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var refine_anchors(const Var& anchors, const Var& offset) {
  EMO_CHECK(anchors.shape() == offset.shape() && anchors.value().cols() == 4, ShapeError,
            "refine_anchors: anchors and offsets must both be (tokens, 4)");
  const std::size_t n = anchors.value().size();
  Tensor out(anchors.shape());
  // Per element: d out / d a (before the output clamp) and d out / d offset.
  std::vector<double> da(n), doff(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = anchors.value()[i];
    const double ac = std::clamp(a, kAnchorEps, 1.0 - kAnchorEps);
    const double z = std::log(ac / (1.0 - ac));
    const double s0 = sigmoid(z), s1 = sigmoid(z + offset.value()[i]);
    const double raw = a + (s1 - s0);
    out[i] = std::clamp(raw, 0.0, 1.0);
    const bool live = raw > 0.0 && raw < 1.0;
    const double dz = ac == a ? 1.0 / (a * (1.0 - a)) : 0.0;
    da[i] = live ? 1.0 + (s1 * (1.0 - s1) - s0 * (1.0 - s0)) * dz : 0.0;
    doff[i] = live ? s1 * (1.0 - s1) : 0.0;
  }
  num::FlopCounter::add(cost::kElementwise * n);
  return num::make_op(std::move(out), {anchors, offset},
                      [anchors, offset, da = std::move(da), doff = std::move(doff)](const num::Node& self) {
                        Tensor ga(anchors.shape()), go(offset.shape());
                        for (std::size_t i = 0; i < da.size(); ++i) {
                          ga[i] = self.grad[i] * da[i];
                          go[i] = self.grad[i] * doff[i];
                        }
                        anchors.accumulate_grad(ga);
                        offset.accumulate_grad(go);
                      });
}

namespace {

Var mix_group(const BlockConfig& cfg, const BlockWeights& w, const Var& u) {
  if (cfg.mixer == MixerKind::kTokenMlp) return w.token_mlp(u);
  const Var v = num::silu(num::dwconv(u, w.dw_kernel, w.dw_bias));
  switch (cfg.mixer) {
    case MixerKind::kUnidirectional: return ssm::selective_scan(w.ssm[0], v);
    case MixerKind::kBidirectional: return ssm::bidirectional_scan(w.ssm[0], w.ssm[1], v);
    case MixerKind::kLocalUnidirectional: return scan::local_unidirectional_scan(w.ssm[0], cfg.topo, v);
    case MixerKind::kLocalBidirectional: return scan::local_bidirectional_scan(w.ssm[0], cfg.topo, v);
    case MixerKind::kSelfAttention: return attn::self_attention_core(v, w.attn);
    case MixerKind::kTokenMlp: break;
  }
  return v;
}

}  // namespace

Var token_mixer(const BlockConfig& cfg, const BlockWeights& w, const Var& u) {
  if (!is_local(cfg.mixer)) return mix_group(cfg, w, u);
  const std::size_t j = cfg.topo.size();
  const std::size_t n = u.value().rows() / j;
  std::vector<Var> parts;
  parts.reserve(n);
  for (std::size_t p = 0; p < n; ++p) parts.push_back(mix_group(cfg, w, num::slice_rows(u, p * j, j)));
  return n == 1 ? parts[0] : num::concat_rows(parts);
}

BlockOutput mamba_block_forward(const BlockConfig& cfg, const BlockWeights& w, const Var& tokens,
                                const Var& anchors) {
  EMO_CHECK(w.mixer == cfg.mixer, ConfigError, "block: weights were built for mixer " + to_string(w.mixer));
  const std::size_t n = tokens.value().rows();
  EMO_CHECK(tokens.value().rank() == 2 && tokens.value().cols() == cfg.dim && n > 0, ShapeError,
            "block: tokens must be (T, " + std::to_string(cfg.dim) + ")");
  EMO_CHECK(anchors.value().rank() == 2 && anchors.value().rows() == n && anchors.value().cols() == 4, ShapeError,
            "block: anchors must be (" + std::to_string(n) + ", 4), got " + num::shape_str(anchors.shape()));
  if (is_local(cfg.mixer))
    EMO_CHECK(n % cfg.topo.size() == 0, ShapeError,
              "block: local mixer needs a multiple of J=" + std::to_string(cfg.topo.size()) + " tokens, got " +
                  std::to_string(n));

  const Var t_in = num::add(tokens, w.mlp_pe(sinusoidal_pe(anchors, cfg.dim)));
  const Var t_o = num::add(w.ln2(token_mixer(cfg, w, w.ln1(t_in))), t_in);
  const Var ffn = w.mlp_main(w.ln3(t_o));
  const Var t_out = cfg.mlp_residual ? num::add(t_o, ffn) : ffn;
  return {t_out, refine_anchors(anchors, w.mlp_offset(t_out))};
}

std::uint64_t token_mixer_flops(const BlockConfig& cfg, std::uint64_t t) {
  const std::uint64_t d = cfg.dim, n = cfg.n_state;
  if (cfg.mixer == MixerKind::kTokenMlp) return 2 * (cost::matmul(t, d, d) + t * d) + t * d;
  std::uint64_t f = cost::dwconv(t, d, cfg.conv_width) + t * d;
  const std::uint64_t j = is_local(cfg.mixer) ? cfg.topo.size() : t;
  const std::uint64_t groups = t / j;
  switch (cfg.mixer) {
    case MixerKind::kUnidirectional: f += cost::selective_scan(t, d, n); break;
    case MixerKind::kBidirectional: f += 2 * cost::selective_scan(t, d, n) + 2 * t * d; break;
    case MixerKind::kLocalUnidirectional: f += groups * (2 * cost::selective_scan(j, d, n) + 2 * j * d); break;
    case MixerKind::kLocalBidirectional: f += groups * (4 * cost::selective_scan(j, d, n) + 6 * j * d); break;
    case MixerKind::kSelfAttention: f += attn::self_attention_core_flops(t, d, cfg.attn_heads); break;
    case MixerKind::kTokenMlp: break;
  }
  return f;
}

std::uint64_t block_flops(const BlockConfig& cfg, std::uint64_t t) {
  const std::uint64_t d = cfg.dim;
  const auto linear = [](std::uint64_t m, std::uint64_t k, std::uint64_t o) { return cost::matmul(m, k, o) + m * o; };
  const auto mlp = [&](std::uint64_t in, std::uint64_t hidden, std::uint64_t out) {
    return linear(t, in, hidden) + t * hidden + linear(t, hidden, out);
  };
  std::uint64_t f = t * d + mlp(d, d, d) + t * d;  // PE, mlp_pe, add
  f += 2 * cost::kLayerNorm * t * d;             // ln1, ln2
  f += token_mixer_flops(cfg, t);
  f += t * d;                                          // residual around the mixer
  f += cost::kLayerNorm * t * d + mlp(d, 4 * d, d);   // ln3, mlp_main
  if (cfg.mlp_residual) f += t * d;
  f += linear(t, d, 4) + 4 * t;                        // mlp_offset, refine
  return f;
}

}  // namespace emo::block
