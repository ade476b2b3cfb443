#include "emo/decoder/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "emo/error.hpp"
#include "emo/numerics/flops.hpp"
#include "emo/numerics/ops.hpp"

namespace emo::decoder {

using block::MixerKind;

block::BlockConfig DecoderConfig::global_block() const {
  block::BlockConfig b;
  b.dim = dim;
  b.n_state = n_state;
  b.conv_width = conv_width;
  b.mixer = use_global ? global_mixer : MixerKind::kTokenMlp;
  b.mlp_residual = mlp_residual;
  b.zero_init_outputs = zero_init_outputs;
  b.attn_heads = attn_heads;
  b.topo = topo;
  return b;
}

block::BlockConfig DecoderConfig::local_block() const {
  block::BlockConfig b = global_block();
  b.mixer = use_local ? local_mixer : MixerKind::kTokenMlp;
  return b;
}

void DecoderConfig::validate() const {
  EMO_CHECK(n_layers >= 1, ConfigError, "decoder: n_layers must be at least 1");
  EMO_CHECK(n_persons >= 1, ConfigError, "decoder: n_persons must be at least 1");
  EMO_CHECK(dim % 8 == 0 && dim > 0, ConfigError, "decoder: dim must be a positive multiple of 8");
  EMO_CHECK(!block::is_local(global_mixer), ConfigError,
            "decoder: the global stage spans several persons and cannot use a local mixer");
  topo.validate();
}

PersonTokens rearrange_to_persons(const std::vector<HumanQueries>& batch) {
  PersonTokens out;
  for (const auto& item : batch) {
    EMO_CHECK(item.q.value().rows() == item.size() && item.anchors.value().rows() == item.size(), ShapeError,
              "rearrange: queries must hold N*J rows");
    for (std::size_t n = 0; n < item.n_persons; ++n) {
      out.q.push_back(num::slice_rows(item.q, n * item.n_joints, item.n_joints));
      out.anchors.push_back(num::slice_rows(item.anchors, n * item.n_joints, item.n_joints));
    }
  }
  return out;
}

std::vector<HumanQueries> rearrange_from_persons(const PersonTokens& persons, std::size_t n_persons) {
  EMO_CHECK(n_persons > 0 && persons.q.size() % n_persons == 0 && persons.q.size() == persons.anchors.size(),
            ShapeError, "rearrange: person count is not a multiple of N=" + std::to_string(n_persons));
  std::vector<HumanQueries> batch;
  for (std::size_t b = 0; b * n_persons < persons.q.size(); ++b) {
    const auto first = persons.q.begin() + static_cast<std::ptrdiff_t>(b * n_persons);
    const auto first_a = persons.anchors.begin() + static_cast<std::ptrdiff_t>(b * n_persons);
    const std::vector<Var> q(first, first + static_cast<std::ptrdiff_t>(n_persons));
    const std::vector<Var> a(first_a, first_a + static_cast<std::ptrdiff_t>(n_persons));
    batch.push_back({n_persons == 1 ? q[0] : num::concat_rows(q), n_persons == 1 ? a[0] : num::concat_rows(a),
                     n_persons, q[0].value().rows()});
  }
  return batch;
}

DecoderWeights DecoderWeights::init(num::Rng& rng, const DecoderConfig& cfg) {
  cfg.validate();
  DecoderWeights w;
  const std::size_t d = cfg.dim;
  // Few patches hold a person: start every patch at probability 1/32.
  w.score_head = nn::Linear::init(rng, d, 1, 0.1);
  w.score_head.b.mutable_value()[0] = -std::log(31.0);
  w.joint_embed = Var::parameter(rng.normal_tensor({cfg.n_joints(), d}, 1.0));
  w.anchor_mlp = nn::Mlp::init(rng, d, d, 4, false);
  const auto gcfg = cfg.global_block(), lcfg = cfg.local_block();
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerWeights lw;
    lw.global = block::BlockWeights::init(rng, gcfg);
    lw.use_cross = cfg.use_cross;
    if (cfg.use_cross) {
      lw.cross = attn::AttentionWeights::init(rng, d, cfg.attn_heads);
    } else {
      lw.cross_ln = nn::LayerNorm::init(d);
      lw.cross_mlp = nn::Mlp::init(rng, d, 2 * d, d, cfg.zero_init_outputs);
    }
    lw.local = block::BlockWeights::init(rng, lcfg);
    w.layers.push_back(std::move(lw));
  }
  return w;
}

nn::NamedParams DecoderWeights::named_parameters(const std::string& prefix) const {
  nn::NamedParams p = score_head.named_parameters(prefix + "score.");
  p.emplace_back(prefix + "joint_embed", joint_embed);
  nn::append(p, anchor_mlp.named_parameters(prefix + "anchor_mlp."));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string lp = prefix + "layer" + std::to_string(l) + ".";
    nn::append(p, layers[l].global.named_parameters(lp + "global."));
    if (layers[l].use_cross) {
      nn::append(p, layers[l].cross.named_parameters(lp + "cross."));
    } else {
      nn::append(p, layers[l].cross_ln.named_parameters(lp + "cross_ln."));
      nn::append(p, layers[l].cross_mlp.named_parameters(lp + "cross_mlp."));
    }
    nn::append(p, layers[l].local.named_parameters(lp + "local."));
  }
  return p;
}

TokenSelection select_tokens(const Var& features, const nn::Linear& score_head, std::size_t n) {
  const std::size_t patches = features.value().rows();
  EMO_CHECK(n >= 1 && n <= patches, ShapeError,
            "select_tokens: cannot select " + std::to_string(n) + " of " + std::to_string(patches) + " patches");
  TokenSelection s;
  s.logits = score_head(features);
  // Ranking by logit is ranking by sigmoid score, without saturation ties.
  std::vector<std::size_t> order(patches);
  std::iota(order.begin(), order.end(), 0);
  const Tensor& lg = s.logits.value();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lg[a] > lg[b]; });
  s.patches.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  s.tokens = num::gather_rows(features, s.patches);
  s.scores = Tensor({n});
  for (std::size_t i = 0; i < n; ++i) s.scores[i] = 1.0 / (1.0 + std::exp(-lg[s.patches[i]]));
  return s;
}

HumanQueries expand_queries(const Var& tokens, const Var& joint_embed, const nn::Mlp& anchor_mlp,
                            const Tensor& prior) {
  const std::size_t n = tokens.value().rows(), j = joint_embed.value().rows();
  EMO_CHECK(tokens.value().cols() == joint_embed.value().cols(), ShapeError,
            "expand_queries: token and joint embedding widths differ");
  std::vector<std::size_t> person(n * j), joint(n * j);
  for (std::size_t i = 0; i < n * j; ++i) {
    person[i] = i / j;
    joint[i] = i % j;
  }
  EMO_CHECK(prior.empty() || (prior.rows() == n && prior.cols() == 4), ShapeError,
            "expand_queries: prior must be (N, 4)");
  const Var raw = anchor_mlp(tokens);
  const Var anchors = num::sigmoid(prior.empty() ? raw : num::add(raw, Var::constant(prior)));
  return {num::add(num::gather_rows(tokens, person), num::gather_rows(joint_embed, joint)),
          num::gather_rows(anchors, person), n, j};
}

std::vector<attn::KvMemory> project_memories(const DecoderConfig& cfg, const DecoderWeights& w, const Var& features) {
  std::vector<attn::KvMemory> out;
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    out.push_back(cfg.use_cross ? attn::project_memory(features, w.layers[l].cross) : attn::KvMemory{});
  return out;
}

HumanQueries sgld_layer(const DecoderConfig& cfg, const LayerWeights& w, const HumanQueries& q,
                        const attn::KvMemory& kv) {
  EMO_CHECK(q.n_joints == cfg.n_joints() && q.q.value().rows() == q.size() && q.q.value().cols() == cfg.dim,
            ShapeError, "sgld_layer: queries must be (N*J, D) with J=" + std::to_string(cfg.n_joints()));
  const auto g = block::mamba_block_forward(cfg.global_block(), w.global, q.q, q.anchors);
  const Var c = w.use_cross ? attn::cross_attention(g.tokens, kv, w.cross)
                            : num::add(g.tokens, w.cross_mlp(w.cross_ln(g.tokens)));

  return local_stage(cfg, w, {c, g.anchors, q.n_persons, q.n_joints});
}

HumanQueries local_stage(const DecoderConfig& cfg, const LayerWeights& w, const HumanQueries& q) {
  PersonTokens persons = rearrange_to_persons({q});
  const auto lcfg = cfg.local_block();
  for (std::size_t n = 0; n < persons.q.size(); ++n) {
    const auto out = block::mamba_block_forward(lcfg, w.local, persons.q[n], persons.anchors[n]);
    persons.q[n] = out.tokens;
    persons.anchors[n] = out.anchors;
  }
  return rearrange_from_persons(persons, q.n_persons).front();
}

std::vector<HumanQueries> decode(const DecoderConfig& cfg, const DecoderWeights& w, const HumanQueries& q0,
                                 const Var& features) {
  EMO_CHECK(w.layers.size() == cfg.n_layers, ConfigError, "decode: weights hold " + std::to_string(w.layers.size()) +
                                                              " layers, config asks for " +
                                                              std::to_string(cfg.n_layers));
  const auto memories = project_memories(cfg, w, features);
  std::vector<HumanQueries> stages;
  const HumanQueries* cur = &q0;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    stages.push_back(sgld_layer(cfg, w.layers[l], *cur, memories[l]));
    cur = &stages.back();
  }
  return stages;
}

DecodeResult run_decoder(const DecoderConfig& cfg, const DecoderWeights& w, const Var& features,
                         const std::vector<std::pair<double, double>>& patch_centers) {
  EMO_CHECK(patch_centers.empty() || patch_centers.size() == features.value().rows(), ShapeError,
            "run_decoder: need one center per patch");
  DecodeResult r;
  r.selection = select_tokens(features, w.score_head, cfg.n_persons);
  Tensor prior;
  if (!patch_centers.empty()) {
    prior = Tensor({r.selection.patches.size(), 4});
    const auto logit = [](double p) { return std::log(p / (1.0 - p)); };
    for (std::size_t i = 0; i < r.selection.patches.size(); ++i) {
      const auto [x, y] = patch_centers[r.selection.patches[i]];
      prior.at(i, 0) = logit(x);
      prior.at(i, 1) = logit(y);
    }
  }
  r.stages = decode(cfg, w, expand_queries(r.selection.tokens, w.joint_embed, w.anchor_mlp, prior), features);
  return r;
}

std::uint64_t sgld_layer_flops(const DecoderConfig& cfg, std::uint64_t n_persons, std::uint64_t patches) {
  const std::uint64_t j = cfg.n_joints(), m = n_persons * j, d = cfg.dim;
  std::uint64_t f = block::block_flops(cfg.global_block(), m);
  if (cfg.use_cross) {
    f += attn::cross_attention_flops(m, patches, d, cfg.attn_heads);
  } else {
    const std::uint64_t h = 2 * d;
    f += num::cost::kLayerNorm * m * d + num::cost::matmul(m, d, h) + 2 * m * h + num::cost::matmul(m, h, d) +
         2 * m * d;
  }
  return f + n_persons * block::block_flops(cfg.local_block(), j);
}

io::Archive to_archive(const nn::NamedParams& params) {
  io::Archive a;
  for (const auto& [name, p] : params) a.add(name, p.value());
  return a;
}

void from_archive(const io::Archive& archive, const nn::NamedParams& params) {
  EMO_CHECK(archive.entries().size() == params.size(), IoError,
            "checkpoint holds " + std::to_string(archive.entries().size()) + " tensors, model has " +
                std::to_string(params.size()));
  for (const auto& [name, p] : params) {
    const Tensor& t = archive.get(name);
    EMO_CHECK(t.shape() == p.shape(), IoError,
              "checkpoint tensor '" + name + "' has shape " + num::shape_str(t.shape()) + ", expected " +
                  num::shape_str(p.shape()));
    Var v = p;
    v.mutable_value() = t;
  }
}

}  // namespace emo::decoder
