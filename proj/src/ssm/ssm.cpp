#include "emo/ssm/ssm.hpp"

#include <cmath>
#include <numeric>

#include "emo/error.hpp"
#include "emo/numerics/flops.hpp"
#include "emo/numerics/kernels.hpp"
#include "emo/numerics/ops.hpp"

namespace emo::ssm {

namespace k = num::kernels;

Tensor SsmParams::a() const {
  Tensor out(a_log.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -std::exp(a_log.value()[i]);
  return out;
}

SsmParams SsmParams::init(num::Rng& rng, std::size_t dim, std::size_t n_state) {
  SsmParams p;
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  p.w_delta = Var::parameter(rng.normal_tensor({dim, 1}, 0.1 * s));
  // softplus^{-1}(v) = log(expm1(v)); v drawn log-uniformly in [0.01, 0.1].
  const double v = std::exp(rng.uniform(std::log(0.01), std::log(0.1)));
  p.delta_bias = Var::parameter(Tensor::vector({std::log(std::expm1(v))}));
  p.w_b = Var::parameter(rng.normal_tensor({dim, n_state}, s));
  p.w_c = Var::parameter(rng.normal_tensor({dim, n_state}, s));
  Tensor a_log({dim, n_state});
  for (std::size_t d = 0; d < dim; ++d)
    for (std::size_t j = 0; j < n_state; ++j) a_log.at(d, j) = std::log(static_cast<double>(j + 1));
  p.a_log = Var::parameter(std::move(a_log));
  return p;
}

std::vector<std::pair<std::string, Var>> SsmParams::named_parameters(const std::string& prefix) const {
  return {{prefix + "w_delta", w_delta},
          {prefix + "delta_bias", delta_bias},
          {prefix + "w_b", w_b},
          {prefix + "w_c", w_c},
          {prefix + "a_log", a_log}};
}

ZohResult zoh_discretize(double a, double delta, double b) {
  EMO_CHECK(delta > 0.0, DomainError, "zoh_discretize: delta must be positive, got " + std::to_string(delta));
  const double a_bar = std::exp(delta * a);
  if (std::abs(delta * a) < k::kZohTaylorThreshold) return {a_bar, delta * b};
  return {a_bar, (a_bar - 1.0) / a * b};
}

ScanOutput recurrence_naive(const std::vector<DiscretizedStep>& steps, const Tensor& c, const Tensor& x) {
  if (steps.empty()) return {Tensor({0, x.rank() == 2 ? x.dim(1) : 0}), Tensor()};
  const std::size_t len = steps.size();
  const std::size_t dim = steps[0].a_bar.dim(0);
  const std::size_t n = steps[0].a_bar.dim(1);
  EMO_CHECK(x.rank() == 2 && x.dim(0) == len && x.dim(1) == dim && c.rank() == 2 && c.dim(0) == len &&
                c.dim(1) == n,
            ShapeError, "recurrence_naive: sequence lengths or widths disagree");
  ScanOutput out{Tensor({len, dim}), Tensor({dim, n})};
  Tensor& h = out.h;
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t d = 0; d < dim; ++d) {
      double y = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        h.at(d, j) = steps[t].a_bar.at(d, j) * h.at(d, j) + steps[t].b_bar.at(d, j) * x.at(t, d);
        y += c.at(t, j) * h.at(d, j);
      }
      out.y.at(t, d) = y;
    }
  }
  return out;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Contributions of one channel to the backward pass, written into disjoint
// slices so channels can run in parallel; cross-channel sums happen after.
void scan_channel_backward(std::size_t d, const Tensor& x, const std::vector<double>& delta, const Tensor& bt,
                           const Tensor& ct, const Tensor& a, const std::vector<double>& states, const Tensor& gy,
                           Tensor& gx, std::vector<double>& g_delta_td, std::vector<double>& g_b_tdk, Tensor& ga) {
  const std::size_t len = x.dim(0), dim = x.dim(1), n = a.dim(1);
  std::vector<double> gh(n, 0.0);
  for (std::size_t tt = len; tt-- > 0;) {
    const double xv = x.at(tt, d);
    const double gyv = gy.at(tt, d);
    double gxv = 0.0, gdel = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double av = a.at(d, j);
      const double dt = delta[tt];
      const double b = bt.at(tt, j);
      gh[j] += gyv * ct.at(tt, j);
      const k::ZohCoeffs z = k::zoh_coeffs(dt, av);
      const double h_prev = tt > 0 ? states[((tt - 1) * dim + d) * n + j] : 0.0;
      const double g_abar = gh[j] * h_prev;
      const double g_phi = gh[j] * b * xv;
      gxv += gh[j] * z.phi * b;
      g_b_tdk[(tt * dim + d) * n + j] = gh[j] * z.phi * xv;
      const bool taylor = std::abs(dt * av) < k::kZohTaylorThreshold;
      const double dphi_ddelta = taylor ? 1.0 : z.a_bar;
      const double dphi_da = taylor ? 0.0 : (dt * av * z.a_bar - std::expm1(dt * av)) / (av * av);
      gdel += g_abar * av * z.a_bar + g_phi * dphi_ddelta;
      ga.at(d, j) += g_abar * dt * z.a_bar + g_phi * dphi_da;
      gh[j] *= z.a_bar;
    }
    gx.at(tt, d) += gxv;
    g_delta_td[tt * dim + d] = gdel;
  }
}

}  // namespace

Var selective_scan(const SsmParams& params, const Var& x) {
  const Tensor& xv = x.value();
  EMO_CHECK(xv.rank() == 2 && xv.dim(1) == params.dim(), ShapeError,
            "selective_scan: input " + num::shape_str(xv.shape()) + " for D=" + std::to_string(params.dim()));
  const std::size_t len = xv.dim(0), dim = xv.dim(1), n = params.n_state();
  const k::Exec exec = k::default_exec();

  Tensor z = k::gemm(xv, false, params.w_delta.value(), false, exec);
  std::vector<double> delta(len);
  for (std::size_t t = 0; t < len; ++t) {
    z[t] += params.delta_bias.value()[0];
    delta[t] = softplus(z[t]);
  }
  Tensor bt = k::gemm(xv, false, params.w_b.value(), false, exec);
  Tensor ct = k::gemm(xv, false, params.w_c.value(), false, exec);
  Tensor a = params.a();

  const bool recording = num::Tape::active() != nullptr;
  std::vector<double> states(recording ? len * dim * n : 0);
  Tensor y({len, dim});
  k::scan({&xv, delta, &bt, &ct, &a}, y, states, exec);
  num::FlopCounter::add(num::cost::selective_scan(len, dim, n));

  const SsmParams p = params;
  return num::make_op(
      std::move(y), {x, p.w_delta, p.delta_bias, p.w_b, p.w_c, p.a_log},
      [x, p, z = std::move(z), delta = std::move(delta), bt = std::move(bt), ct = std::move(ct), a = std::move(a),
       states = std::move(states), len, dim, n](const num::Node& self) {
        const Tensor& gy = self.grad;
        const Tensor& xv = x.value();
        const k::Exec exec = k::default_exec();
        Tensor gx({len, dim});
        Tensor ga({dim, n});
        std::vector<double> g_delta_td(len * dim);
        std::vector<double> g_b_tdk(len * dim * n);
        const auto dims = static_cast<std::ptrdiff_t>(dim);
#pragma omp parallel for schedule(static) if (exec == k::Exec::kParallel && len * dim * n > 16384)
        for (std::ptrdiff_t d = 0; d < dims; ++d)
          scan_channel_backward(static_cast<std::size_t>(d), xv, delta, bt, ct, a, states, gy, gx, g_delta_td,
                                g_b_tdk, ga);

        // Cross-channel reductions in fixed channel order.
        Tensor gz({len, 1});
        Tensor gb({len, n});
        Tensor gc({len, n});
        for (std::size_t t = 0; t < len; ++t) {
          double s = 0.0;
          for (std::size_t d = 0; d < dim; ++d) s += g_delta_td[t * dim + d];
          gz[t] = s * sigmoid(z[t]);
          for (std::size_t d = 0; d < dim; ++d) {
            const double gyv = gy.at(t, d);
            for (std::size_t j = 0; j < n; ++j) {
              gb.at(t, j) += g_b_tdk[(t * dim + d) * n + j];
              gc.at(t, j) += gyv * states[(t * dim + d) * n + j];
            }
          }
        }

        if (x.requires_grad()) {
          const Tensor via_delta = k::gemm(gz, false, p.w_delta.value(), true, exec);
          const Tensor via_b = k::gemm(gb, false, p.w_b.value(), true, exec);
          const Tensor via_c = k::gemm(gc, false, p.w_c.value(), true, exec);
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += via_delta[i] + via_b[i] + via_c[i];
          x.accumulate_grad(gx);
        }
        p.w_delta.accumulate_grad(k::gemm(xv, true, gz, false, exec));
        double gbias = 0.0;
        for (std::size_t t = 0; t < len; ++t) gbias += gz[t];
        p.delta_bias.accumulate_grad(Tensor::vector({gbias}));
        p.w_b.accumulate_grad(k::gemm(xv, true, gb, false, exec));
        p.w_c.accumulate_grad(k::gemm(xv, true, gc, false, exec));
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= a[i];  // d a / d a_log = a
        p.a_log.accumulate_grad(ga);
      });
}

Var reverse_rows(const Var& x) {
  std::vector<std::size_t> idx(x.value().rows());
  std::iota(idx.rbegin(), idx.rend(), 0);
  return num::gather_rows(x, idx);
}

Var bidirectional_scan(const SsmParams& fwd, const SsmParams& bwd, const Var& x) {
  const Var forward = selective_scan(fwd, x);
  const Var backward = reverse_rows(selective_scan(bwd, reverse_rows(x)));
  return num::scale(num::add(forward, backward), 0.5);
}

}  // namespace emo::ssm
