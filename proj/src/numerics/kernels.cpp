#include "emo/numerics/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "emo/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace emo::num::kernels {

namespace {

std::atomic<Exec> g_exec{Exec::kParallel};

struct GemmDims {
  std::size_t m, k, n;
};

GemmDims gemm_dims(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b) {
  EMO_CHECK(a.rank() == 2 && b.rank() == 2, ShapeError,
            "gemm expects 2-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t ka = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  EMO_CHECK(ka == kb, ShapeError,
            "matmul inner extents disagree: " + shape_str(a.shape()) + (trans_a ? "^T" : "") + " x " +
                shape_str(b.shape()) + (trans_b ? "^T" : ""));
  return {m, ka, n};
}

// Computes output row i. Every element is accumulated over k in increasing order.
inline void gemm_row(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b, const GemmDims& g,
                     std::size_t i, double* out) {
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  std::fill(out, out + g.n, 0.0);
  if (!trans_b) {
    for (std::size_t k = 0; k < g.k; ++k) {
      const double av = trans_a ? pa[k * g.m + i] : pa[i * g.k + k];
      const double* brow = pb + k * g.n;
      for (std::size_t j = 0; j < g.n; ++j) out[j] += av * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < g.n; ++j) {
      const double* brow = pb + j * g.k;
      double s = 0.0;
      if (trans_a) {
        for (std::size_t k = 0; k < g.k; ++k) s += pa[k * g.m + i] * brow[k];
      } else {
        const double* arow = pa + i * g.k;
        for (std::size_t k = 0; k < g.k; ++k) s += arow[k] * brow[k];
      }
      out[j] = s;
    }
  }
}

inline void softmax_row(const double* in, double* out, std::size_t n) {
  double mx = -INFINITY;
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - mx);
    s += out[j];
  }
  const double inv = 1.0 / s;
  for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

// One channel of the recurrence over all timesteps.
inline void scan_channel(const ScanInputs& in, std::size_t d, Tensor& y, std::span<double> states,
                         double* h) {
  const std::size_t len = in.x->dim(0);
  const std::size_t dim = in.x->dim(1);
  const std::size_t n = in.a->dim(1);
  const double* a = in.a->data().data() + d * n;
  std::fill(h, h + n, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    const double xv = in.x->at(t, d);
    const double delta = in.delta[t];
    const double* bt = in.b->data().data() + t * n;
    const double* ct = in.c->data().data() + t * n;
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const ZohCoeffs z = zoh_coeffs(delta, a[k]);
      h[k] = z.a_bar * h[k] + z.phi * bt[k] * xv;
      acc += ct[k] * h[k];
    }
    y.at(t, d) = acc;
    if (!states.empty()) std::copy(h, h + n, states.data() + (t * dim + d) * n);
  }
}

void check_scan(const ScanInputs& in, const Tensor& y, std::span<double> states) {
  const std::size_t len = in.x->dim(0);
  const std::size_t dim = in.x->dim(1);
  const std::size_t n = in.a->dim(1);
  EMO_CHECK(in.delta.size() == len && in.b->dim(0) == len && in.c->dim(0) == len && in.b->dim(1) == n &&
                in.c->dim(1) == n && in.a->dim(0) == dim && y.dim(0) == len && y.dim(1) == dim,
            ShapeError, "scan input shapes disagree");
  EMO_CHECK(states.empty() || states.size() == len * dim * n, ShapeError, "scan state buffer size");
}

}  // namespace

Exec default_exec() { return g_exec.load(); }
void set_default_exec(Exec exec) { g_exec.store(exec); }

Tensor gemm_serial(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b) {
  const GemmDims g = gemm_dims(a, trans_a, b, trans_b);
  Tensor c({g.m, g.n});
  for (std::size_t i = 0; i < g.m; ++i) gemm_row(a, trans_a, b, trans_b, g, i, c.data().data() + i * g.n);
  return c;
}

Tensor gemm_parallel(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b) {
  const GemmDims g = gemm_dims(a, trans_a, b, trans_b);
  Tensor c({g.m, g.n});
  double* out = c.data().data();
  const auto m = static_cast<std::ptrdiff_t>(g.m);
#pragma omp parallel for schedule(static) if (g.m * g.k * g.n > 32768)
  for (std::ptrdiff_t i = 0; i < m; ++i) gemm_row(a, trans_a, b, trans_b, g, i, out + i * g.n);
  return c;
}

Tensor gemm(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b, Exec exec) {
  return exec == Exec::kSerial ? gemm_serial(a, trans_a, b, trans_b) : gemm_parallel(a, trans_a, b, trans_b);
}

Tensor softmax_rows(const Tensor& x, Exec exec) {
  EMO_CHECK(x.rank() == 2, ShapeError, "softmax_rows expects a 2-D tensor");
  Tensor out(x.shape());
  const std::size_t n = x.dim(1);
  const auto m = static_cast<std::ptrdiff_t>(x.dim(0));
  if (exec == Exec::kSerial) {
    for (std::ptrdiff_t i = 0; i < m; ++i) softmax_row(x.data().data() + i * n, out.data().data() + i * n, n);
  } else {
#pragma omp parallel for schedule(static) if (x.size() > 16384)
    for (std::ptrdiff_t i = 0; i < m; ++i) softmax_row(x.data().data() + i * n, out.data().data() + i * n, n);
  }
  return out;
}

void scan_serial(const ScanInputs& in, Tensor& y, std::span<double> states) {
  check_scan(in, y, states);
  std::vector<double> h(in.a->dim(1));
  for (std::size_t d = 0; d < in.x->dim(1); ++d) scan_channel(in, d, y, states, h.data());
}

void scan_parallel(const ScanInputs& in, Tensor& y, std::span<double> states) {
  check_scan(in, y, states);
  const auto dim = static_cast<std::ptrdiff_t>(in.x->dim(1));
  const std::size_t n = in.a->dim(1);
  const std::size_t work = in.x->dim(0) * in.x->dim(1) * n;
#pragma omp parallel if (work > 16384)
  {
    std::vector<double> h(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t d = 0; d < dim; ++d) scan_channel(in, static_cast<std::size_t>(d), y, states, h.data());
  }
}

void scan(const ScanInputs& in, Tensor& y, std::span<double> states, Exec exec) {
  if (exec == Exec::kSerial) {
    scan_serial(in, y, states);
  } else {
    scan_parallel(in, y, states);
  }
}

}  // namespace emo::num::kernels
