#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emo/attention/attention.hpp"
#include "emo/nn/layers.hpp"
#include "emo/scan/topology.hpp"
#include "emo/ssm/ssm.hpp"

namespace emo::block {

using num::Tensor;
using num::Var;

// Token mixer inside a block. The scan kinds differ only in how the SSM
// visits the tokens; kSelfAttention and kTokenMlp are comparison baselines.
enum class MixerKind {
  kUnidirectional,
  kBidirectional,
  kLocalUnidirectional,
  kLocalBidirectional,
  kSelfAttention,
  kTokenMlp,
};

std::string to_string(MixerKind kind);
// Accepts the names produced by to_string; throws ConfigError otherwise.
MixerKind parse_mixer_kind(const std::string& name);
bool is_local(MixerKind kind);

struct BlockConfig {
  std::size_t dim = 32;
  std::size_t n_state = 8;
  std::size_t conv_width = 3;
  MixerKind mixer = MixerKind::kBidirectional;
  // Residual connection around the feed-forward MLP.
  bool mlp_residual = true;
  // Zero the output LayerNorm of the mixer branch and the last MLP layer so
  // the block starts as the identity on T_in.
  bool zero_init_outputs = false;
  std::size_t attn_heads = 1;
  // Joint tree for the local kinds; tokens are processed in groups of
  // topo.size() consecutive rows.
  scan::SkeletonTopology topo;
};

struct BlockWeights {
  MixerKind mixer = MixerKind::kBidirectional;
  nn::LayerNorm ln1, ln2, ln3;
  Var dw_kernel;  // (k, D)
  Var dw_bias;    // (D)
  // One set for unidirectional and local kinds, forward/backward for kBidirectional.
  std::vector<ssm::SsmParams> ssm;
  attn::AttentionWeights attn;  // kSelfAttention only
  nn::Mlp token_mlp;            // kTokenMlp only
  nn::Mlp mlp_main;             // D -> 4D -> D
  nn::Mlp mlp_pe;               // D -> D -> D
  nn::Linear mlp_offset;        // D -> 4, zero-initialized

  static BlockWeights init(num::Rng& rng, const BlockConfig& cfg);
  // Only the groups the mixer kind uses.
  nn::NamedParams named_parameters(const std::string& prefix) const;
};

struct BlockOutput {
  Var tokens;   // (T, D)
  Var anchors;  // (T, 4)
};

// Per box coordinate (cx, cy, w, h), dim/4 features: interleaved sin/cos of
// 2*pi*coord at frequencies 10000^(-2i/(dim/4)). Requires dim % 8 == 0.
Tensor sinusoidal_pe(const Tensor& boxes, std::size_t dim);
Var sinusoidal_pe(const Var& boxes, std::size_t dim);

// sigmoid(logit(a) + offset), written as a + (sigmoid(logit(a) + offset) -
// sigmoid(logit(a))) so a zero offset returns a unchanged, clamped to [0, 1].
Var refine_anchors(const Var& anchors, const Var& offset);

// T_in = T + mlp_pe(PE(A))
// T_o  = LN2(mixer(LN1(T_in))) + T_in, mixer = SSM(silu(DWConv(.))) for scan kinds
// T'   = T_o + mlp_main(LN3(T_o))
// A'   = refine_anchors(A, mlp_offset(T'))
BlockOutput mamba_block_forward(const BlockConfig& cfg, const BlockWeights& w, const Var& tokens,
                                const Var& anchors);

// The mixer branch alone, applied to already normalized tokens u (T, D).
Var token_mixer(const BlockConfig& cfg, const BlockWeights& w, const Var& u);
std::uint64_t token_mixer_flops(const BlockConfig& cfg, std::uint64_t tokens);

// Forward FLOPs of mamba_block_forward for `tokens` rows, equal to the counter.
std::uint64_t block_flops(const BlockConfig& cfg, std::uint64_t tokens);

}  // namespace emo::block
