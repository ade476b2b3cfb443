#pragma once

#include <cstddef>
#include <vector>

#include "emo/numerics/autograd.hpp"

// Differentiable ops over 2-D tensors (rank-1 tensors behave as one row).
// This is the complete op set the decoder, heads and losses use; each op has
// a hand-written backward pass and a finite-difference test.
namespace emo::num {

Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);
Var minimum(const Var& a, const Var& b);

// a (m, n) + bias broadcast over rows; bias has n elements.
Var add_row(const Var& a, const Var& bias);
// a (m, n) scaled per row by c (m elements).
Var mul_col(const Var& a, const Var& c);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var exp(const Var& a);
Var log(const Var& a);
Var sigmoid(const Var& a);
// log(p / (1 - p)) with p clamped to [eps, 1 - eps]; gradient is zero where clamped.
Var logit(const Var& a, double eps = 1e-6);
Var softplus(const Var& a);
Var silu(const Var& a);
Var tanh(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);

// Normalizes each row, then applies per-column gamma and beta.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// Depth-wise 1-D convolution along rows, same padding with zeros, non-causal.
// x (L, D), kernel (k, D) with odd k, bias (D).
Var dwconv(const Var& x, const Var& kernel, const Var& bias);
Var softmax_rows(const Var& x);

Var gather_rows(const Var& x, const std::vector<std::size_t>& rows);
Var slice_rows(const Var& x, std::size_t begin, std::size_t count);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& x, std::size_t begin, std::size_t count);
Var concat_cols(const std::vector<Var>& parts);

// Scalar (shape {1}) reductions.
Var sum(const Var& x);
Var mean(const Var& x);
// (m, n) -> (1, n)
Var mean_rows(const Var& x);
// (m, n) -> (m, 1)
Var sum_cols(const Var& x);

// x * W + b for x (m, k), W (k, n), b (n).
Var linear(const Var& x, const Var& w, const Var& b);

}  // namespace emo::num
