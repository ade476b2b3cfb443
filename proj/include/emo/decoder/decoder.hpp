#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "emo/attention/attention.hpp"
#include "emo/block/block.hpp"
#include "emo/io/archive.hpp"
#include "emo/scan/topology.hpp"

namespace emo::decoder {

using num::Tensor;
using num::Var;

struct DecoderConfig {
  std::size_t dim = 32;
  std::size_t n_state = 8;
  std::size_t n_layers = 3;
  std::size_t n_persons = 2;
  std::size_t conv_width = 3;
  std::size_t attn_heads = 1;
  scan::SkeletonTopology topo = scan::default_topology();
  // A disabled stage is replaced by a token-wise MLP of the same width.
  bool use_global = true;
  bool use_cross = true;
  bool use_local = true;
  block::MixerKind global_mixer = block::MixerKind::kBidirectional;
  block::MixerKind local_mixer = block::MixerKind::kLocalBidirectional;
  bool mlp_residual = true;
  bool zero_init_outputs = false;

  std::size_t n_joints() const { return topo.size(); }
  std::size_t n_tokens() const { return n_persons * n_joints(); }
  block::BlockConfig global_block() const;
  block::BlockConfig local_block() const;
  void validate() const;
};

// One image's human tokens; flat index n*J + j is person n, joint j.
struct HumanQueries {
  Var q;        // (N*J, D)
  Var anchors;  // (N*J, 4)
  std::size_t n_persons = 0;
  std::size_t n_joints = 0;

  std::size_t size() const { return n_persons * n_joints; }
  std::size_t person_of(std::size_t i) const { return i / n_joints; }
  std::size_t joint_of(std::size_t i) const { return i % n_joints; }
  std::size_t index(std::size_t person, std::size_t joint) const { return person * n_joints + joint; }
};

// (B, N*J, D) <-> (B*N, J, D), persons in batch-major order.
struct PersonTokens {
  std::vector<Var> q;        // B*N entries of (J, D)
  std::vector<Var> anchors;  // B*N entries of (J, 4)
};
PersonTokens rearrange_to_persons(const std::vector<HumanQueries>& batch);
std::vector<HumanQueries> rearrange_from_persons(const PersonTokens& persons, std::size_t n_persons);

struct LayerWeights {
  block::BlockWeights global;
  block::BlockWeights local;
  attn::AttentionWeights cross;  // when cross attention is enabled
  nn::LayerNorm cross_ln;        // otherwise Q + mlp(LN(Q))
  nn::Mlp cross_mlp;
  bool use_cross = true;
};

struct DecoderWeights {
  nn::Linear score_head;  // D -> 1 patch score
  Var joint_embed;        // (J, D)
  nn::Mlp anchor_mlp;     // D -> D -> 4
  std::vector<LayerWeights> layers;

  static DecoderWeights init(num::Rng& rng, const DecoderConfig& cfg);
  nn::NamedParams named_parameters(const std::string& prefix = "") const;
};

struct TokenSelection {
  Var tokens;                        // (N, D) in descending score order
  std::vector<std::size_t> patches;  // selected patch indices, same order
  Tensor scores;                     // (N) sigmoid scores of the selected patches
  Var logits;                        // (P, 1) raw scores for every patch
};

// Top-n patches by score; equal scores prefer the lower patch index.
TokenSelection select_tokens(const Var& features, const nn::Linear& score_head, std::size_t n);

// q[n*J + j] = tokens[n] + joint_embed[j]; each person's J tokens share the
// anchor sigmoid(anchor_mlp(tokens[n]) + prior[n]). An empty prior is zero.
HumanQueries expand_queries(const Var& tokens, const Var& joint_embed, const nn::Mlp& anchor_mlp,
                            const Tensor& prior = {});

// Per-layer key/value projections of the image features.
std::vector<attn::KvMemory> project_memories(const DecoderConfig& cfg, const DecoderWeights& w, const Var& features);

// Local block applied to each person's J tokens independently.
HumanQueries local_stage(const DecoderConfig& cfg, const LayerWeights& w, const HumanQueries& q);

// Global block over all tokens, cross attention, then local_stage.
HumanQueries sgld_layer(const DecoderConfig& cfg, const LayerWeights& w, const HumanQueries& q,
                        const attn::KvMemory& kv);

// Every layer's output, first layer first.
std::vector<HumanQueries> decode(const DecoderConfig& cfg, const DecoderWeights& w, const HumanQueries& q0,
                                 const Var& features);

struct DecodeResult {
  TokenSelection selection;
  std::vector<HumanQueries> stages;
};
// With patch centers given, each selected token's anchor center starts at its
// patch center (the prior holds their logits).
DecodeResult run_decoder(const DecoderConfig& cfg, const DecoderWeights& w, const Var& features,
                         const std::vector<std::pair<double, double>>& patch_centers = {});

// Forward FLOPs of one sgld_layer for `n_persons` persons against `patches`
// memory rows, excluding the memory projection.
std::uint64_t sgld_layer_flops(const DecoderConfig& cfg, std::uint64_t n_persons, std::uint64_t patches);

io::Archive to_archive(const nn::NamedParams& params);
// Copies archived values into the parameters; names and shapes must match.
void from_archive(const io::Archive& archive, const nn::NamedParams& params);

}  // namespace emo::decoder
