#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include "emo/numerics/tensor.hpp"

// Dense kernels in two flavours: a serial reference and an OpenMP version
// that splits independent output rows (or scan channels) across threads.
// Both accumulate every output element in the same order, so results are
// bit-identical regardless of thread count.
namespace emo::num::kernels {

enum class Exec { kSerial, kParallel };

// Policy used by the autograd ops. Defaults to kParallel.
Exec default_exec();
void set_default_exec(Exec exec);

// c = op(a) * op(b), with op = transpose when the flag is set.
Tensor gemm(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b, Exec exec);
Tensor gemm_serial(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b);
Tensor gemm_parallel(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b);

// Row-wise softmax of a 2-D tensor.
Tensor softmax_rows(const Tensor& x, Exec exec);

// Inputs of the diagonal selective recurrence after the per-token projections:
//   x (L, D), delta (L), b (L, n), c (L, n), a (D, n) with a < 0.
// Writes y (L, D) and, when `states` is non-empty, every hidden state into
// states[(t * D + d) * n + k].
struct ScanInputs {
  const Tensor* x;
  std::span<const double> delta;
  const Tensor* b;
  const Tensor* c;
  const Tensor* a;
};

// |delta * a| below this uses the first-order limit b_bar = delta * b.
inline constexpr double kZohTaylorThreshold = 1e-6;

// Zero-order-hold coefficients for one (delta, a) pair:
//   a_bar = exp(delta * a), b_bar = phi * b with phi = (exp(delta * a) - 1) / a.
struct ZohCoeffs {
  double a_bar;
  double phi;
};

inline ZohCoeffs zoh_coeffs(double delta, double a) {
  const double da = delta * a;
  const double em = std::expm1(da);
  if (std::abs(da) < kZohTaylorThreshold) return {1.0 + em, delta};
  return {1.0 + em, em / a};
}

void scan_serial(const ScanInputs& in, Tensor& y, std::span<double> states);
void scan_parallel(const ScanInputs& in, Tensor& y, std::span<double> states);
void scan(const ScanInputs& in, Tensor& y, std::span<double> states, Exec exec);

}  // namespace emo::num::kernels
