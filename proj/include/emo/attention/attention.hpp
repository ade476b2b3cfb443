#pragma once

#include <cstdint>

#include "emo/nn/layers.hpp"

namespace emo::attn {

using num::Tensor;
using num::Var;

// Query/key/value projections for scaled dot-product attention, split into
// `heads` equal column groups. There is no output projection.
struct AttentionWeights {
  Var wq;  // (D, D)
  Var wk;  // (D, D)
  Var wv;  // (D, D)
  std::size_t heads = 1;

  static AttentionWeights init(num::Rng& rng, std::size_t dim, std::size_t heads = 1);
  std::size_t dim() const { return wq.value().dim(0); }
  nn::NamedParams named_parameters(const std::string& prefix) const;
};

// Projected image features; computed once per image and reused for every
// query set attending to it.
struct KvMemory {
  Var k;  // (P, D)
  Var v;  // (P, D)
};

KvMemory project_memory(const Var& features, const AttentionWeights& w);

// q + softmax(q Wq k^T / sqrt(d_head)) v, softmax over patches.
Var cross_attention(const Var& q, const KvMemory& kv, const AttentionWeights& w);
Var cross_attention(const Var& q, const Var& features, const AttentionWeights& w);

// Attention weights (M, P) of the first head, for inspection and tests.
Tensor cross_attention_weights(const Var& q, const KvMemory& kv, const AttentionWeights& w);

// softmax(x Wq (x Wk)^T / sqrt(d_head)) x Wv without the residual.
Var self_attention_core(const Var& x, const AttentionWeights& w);
// x + self_attention_core(x)
Var self_attention_baseline(const Var& x, const AttentionWeights& w);

// Closed-form forward FLOPs matching the op-level counter.
std::uint64_t cross_attention_flops(std::uint64_t m, std::uint64_t patches, std::uint64_t dim,
                                    std::uint64_t heads = 1);
std::uint64_t project_memory_flops(std::uint64_t patches, std::uint64_t dim);
std::uint64_t self_attention_core_flops(std::uint64_t m, std::uint64_t dim, std::uint64_t heads = 1);
// The M x M part only: scores, scaling, softmax and weighting of values.
std::uint64_t self_attention_matrix_flops(std::uint64_t m, std::uint64_t dim, std::uint64_t heads = 1);

}  // namespace emo::attn
