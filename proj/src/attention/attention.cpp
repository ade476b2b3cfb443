#include "emo/attention/attention.hpp"

#include <cmath>

#include "emo/error.hpp"
#include "emo/numerics/flops.hpp"
#include "emo/numerics/kernels.hpp"
#include "emo/numerics/ops.hpp"

namespace emo::attn {

using num::cost::kElementwise;
using num::cost::kSoftmax;
using num::cost::matmul;

AttentionWeights AttentionWeights::init(num::Rng& rng, std::size_t dim, std::size_t heads) {
  EMO_CHECK(heads >= 1 && dim % heads == 0, ConfigError, "attention: heads must divide the model dimension");
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  return {Var::parameter(rng.normal_tensor({dim, dim}, s)), Var::parameter(rng.normal_tensor({dim, dim}, s)),
          Var::parameter(rng.normal_tensor({dim, dim}, s)), heads};
}

nn::NamedParams AttentionWeights::named_parameters(const std::string& prefix) const {
  return {{prefix + "wq", wq}, {prefix + "wk", wk}, {prefix + "wv", wv}};
}

KvMemory project_memory(const Var& features, const AttentionWeights& w) {
  EMO_CHECK(features.value().rows() > 0, ShapeError, "cross_attention: empty key/value set");
  return {num::matmul(features, w.wk), num::matmul(features, w.wv)};
}

namespace {

Var attend(const Var& q, const Var& k, const Var& v, std::size_t heads) {
  const std::size_t dim = q.value().cols();
  const std::size_t dh = dim / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = heads == 1 ? q : num::slice_cols(q, h * dh, dh);
    const Var kh = heads == 1 ? k : num::slice_cols(k, h * dh, dh);
    const Var vh = heads == 1 ? v : num::slice_cols(v, h * dh, dh);
    const Var weights = num::softmax_rows(num::scale(num::matmul_nt(qh, kh), inv));
    outs.push_back(num::matmul(weights, vh));
  }
  return heads == 1 ? outs[0] : num::concat_cols(outs);
}

}  // namespace

Var cross_attention(const Var& q, const KvMemory& kv, const AttentionWeights& w) {
  EMO_CHECK(kv.k.value().rows() > 0, ShapeError, "cross_attention: empty key/value set");
  EMO_CHECK(q.value().cols() == w.dim() && kv.k.value().cols() == w.dim(), ShapeError,
            "cross_attention: query and memory widths must equal D=" + std::to_string(w.dim()));
  return num::add(q, attend(num::matmul(q, w.wq), kv.k, kv.v, w.heads));
}

Var cross_attention(const Var& q, const Var& features, const AttentionWeights& w) {
  return cross_attention(q, project_memory(features, w), w);
}

Tensor cross_attention_weights(const Var& q, const KvMemory& kv, const AttentionWeights& w) {
  num::Tape::Pause pause;
  const std::size_t dh = w.dim() / w.heads;
  Var qh = num::matmul(q, w.wq);
  Var kh = kv.k;
  if (w.heads > 1) {
    qh = num::slice_cols(qh, 0, dh);
    kh = num::slice_cols(kh, 0, dh);
  }
  return num::softmax_rows(num::scale(num::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)))).value();
}

Var self_attention_core(const Var& x, const AttentionWeights& w) {
  EMO_CHECK(x.value().rows() >= 1, ShapeError, "self_attention: needs at least one token");
  return attend(num::matmul(x, w.wq), num::matmul(x, w.wk), num::matmul(x, w.wv), w.heads);
}

Var self_attention_baseline(const Var& x, const AttentionWeights& w) {
  return num::add(x, self_attention_core(x, w));
}

std::uint64_t self_attention_matrix_flops(std::uint64_t m, std::uint64_t dim, std::uint64_t heads) {
  // Per head: scores (m x m x dh), scale, softmax, weights x values.
  return matmul(m, dim, m) + (kElementwise + kSoftmax) * heads * m * m + matmul(m, m, dim);
}

std::uint64_t cross_attention_flops(std::uint64_t m, std::uint64_t patches, std::uint64_t dim,
                                    std::uint64_t heads) {
  return matmul(m, dim, dim) + matmul(m, dim, patches) + (kElementwise + kSoftmax) * heads * m * patches +
         matmul(m, patches, dim) + kElementwise * m * dim;
}

std::uint64_t project_memory_flops(std::uint64_t patches, std::uint64_t dim) { return 2 * matmul(patches, dim, dim); }

std::uint64_t self_attention_core_flops(std::uint64_t m, std::uint64_t dim, std::uint64_t heads) {
  return 3 * matmul(m, dim, dim) + self_attention_matrix_flops(m, dim, heads);
}

}  // namespace emo::attn
