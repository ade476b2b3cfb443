#include "emo/numerics/ops.hpp"

#include <algorithm>
#include <cmath>

#include "emo/error.hpp"
#include "emo/numerics/flops.hpp"
#include "emo/numerics/kernels.hpp"

namespace emo::num {

namespace {

using kernels::default_exec;

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

void require_same(const Var& a, const Var& b, const char* op) {
  EMO_CHECK(a.shape() == b.shape(), ShapeError,
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Shape as_matrix(const Tensor& t) { return {t.rows(), t.cols()}; }

// Unary op where the local derivative is a function of (input, output).
template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
  Tensor out = map(a.value(), f);
  FlopCounter::add(cost::kElementwise * out.size());
  return make_op(std::move(out), {a}, [a, df](const Node& self) {
    Tensor g(a.shape());
    const auto x = a.value().data();
    const auto y = self.value.data();
    const auto gy = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = gy[i] * df(x[i], y[i]);
    a.accumulate_grad(g);
  });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tensor out = kernels::gemm(a.value().reshaped(as_matrix(a.value())), false,
                             b.value().reshaped(as_matrix(b.value())), false, default_exec());
  FlopCounter::add(cost::matmul(out.dim(0), a.value().cols(), out.dim(1)));
  return make_op(std::move(out), {a, b}, [a, b](const Node& self) {
    const Tensor am = a.value().reshaped(as_matrix(a.value()));
    const Tensor bm = b.value().reshaped(as_matrix(b.value()));
    if (a.requires_grad()) a.accumulate_grad(kernels::gemm(self.grad, false, bm, true, default_exec()));
    if (b.requires_grad()) b.accumulate_grad(kernels::gemm(am, true, self.grad, false, default_exec()));
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tensor out = kernels::gemm(a.value(), false, b.value(), true, default_exec());
  FlopCounter::add(cost::matmul(out.dim(0), a.value().cols(), out.dim(1)));
  return make_op(std::move(out), {a, b}, [a, b](const Node& self) {
    if (a.requires_grad()) a.accumulate_grad(kernels::gemm(self.grad, false, b.value(), false, default_exec()));
    if (b.requires_grad()) b.accumulate_grad(kernels::gemm(self.grad, true, a.value(), false, default_exec()));
  });
}

Var transpose(const Var& a) {
  const Tensor& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
  return make_op(std::move(out), {a}, [a, r, c](const Node& self) {
    Tensor g({r, c});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g.at(i, j) = self.grad.at(j, i);
    a.accumulate_grad(g);
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  FlopCounter::add(out.size());
  return make_op(std::move(out), {a, b}, [a, b](const Node& self) {
    a.accumulate_grad(self.grad);
    b.accumulate_grad(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  FlopCounter::add(out.size());
  return make_op(std::move(out), {a, b}, [a, b](const Node& self) {
    a.accumulate_grad(self.grad);
    if (b.requires_grad()) b.accumulate_grad(map(self.grad, [](double g) { return -g; }));
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  FlopCounter::add(out.size());
  return make_op(std::move(out), {a, b}, [a, b](const Node& self) {
    const std::size_t n = self.grad.size();
    if (a.requires_grad()) {
      Tensor g(a.shape());
      for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * b.value()[i];
      a.accumulate_grad(g);
    }
    if (b.requires_grad()) {
      Tensor g(b.shape());
      for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * a.value()[i];
      b.accumulate_grad(g);
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same(a, b, "div");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  FlopCounter::add(out.size());
  return make_op(std::move(out), {a, b}, [a, b](const Node& self) {
    const std::size_t n = self.grad.size();
    if (a.requires_grad()) {
      Tensor g(a.shape());
      for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] / b.value()[i];
      a.accumulate_grad(g);
    }
    if (b.requires_grad()) {
      Tensor g(b.shape());
      for (std::size_t i = 0; i < n; ++i) g[i] = -self.grad[i] * self.value[i] / b.value()[i];
      b.accumulate_grad(g);
    }
  });
}

namespace {
// Ties route the gradient to the first operand.
Var select_op(const Var& a, const Var& b, bool take_max) {
  require_same(a, b, take_max ? "maximum" : "minimum");
  const std::size_t n = a.value().size();
  Tensor out(a.shape());
  std::vector<char> from_a(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a.value()[i], y = b.value()[i];
    from_a[i] = take_max ? (x >= y) : (x <= y);
    out[i] = from_a[i] ? x : y;
  }
  FlopCounter::add(n);
  return make_op(std::move(out), {a, b}, [a, b, from_a = std::move(from_a)](const Node& self) {
    Tensor ga(a.shape()), gb(b.shape());
    for (std::size_t i = 0; i < from_a.size(); ++i) (from_a[i] ? ga : gb)[i] = self.grad[i];
    a.accumulate_grad(ga);
    b.accumulate_grad(gb);
  });
}
}  // namespace

Var maximum(const Var& a, const Var& b) { return select_op(a, b, true); }
Var minimum(const Var& a, const Var& b) { return select_op(a, b, false); }

Var add_row(const Var& a, const Var& bias) {
  const std::size_t m = a.value().rows(), n = a.value().cols();
  EMO_CHECK(bias.value().size() == n, ShapeError,
            "add_row: bias of shape " + shape_str(bias.shape()) + " for rows of width " + std::to_string(n));
  Tensor out(a.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.value()[i * n + j] + bias.value()[j];
  FlopCounter::add(out.size());
  return make_op(std::move(out), {a, bias}, [a, bias, m, n](const Node& self) {
    a.accumulate_grad(self.grad);
    if (bias.requires_grad()) {
      Tensor g(bias.shape());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
      bias.accumulate_grad(g);
    }
  });
}

Var mul_col(const Var& a, const Var& c) {
  const std::size_t m = a.value().rows(), n = a.value().cols();
  EMO_CHECK(c.value().size() == m, ShapeError,
            "mul_col: column of shape " + shape_str(c.shape()) + " for " + std::to_string(m) + " rows");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.value()[i * n + j] * c.value()[i];
  FlopCounter::add(out.size());
  return make_op(std::move(out), {a, c}, [a, c, m, n](const Node& self) {
    if (a.requires_grad()) {
      Tensor g(a.shape());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] = self.grad[i * n + j] * c.value()[i];
      a.accumulate_grad(g);
    }
    if (c.requires_grad()) {
      Tensor g(c.shape());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i] += self.grad[i * n + j] * a.value()[i * n + j];
      c.accumulate_grad(g);
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sigmoid(const Var& a) {
  return unary(a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var logit(const Var& a, double eps) {
  return unary(
      a,
      [eps](double p) {
        const double q = std::clamp(p, eps, 1.0 - eps);
        return std::log(q / (1.0 - q));
      },
      [eps](double p, double) { return (p < eps || p > 1.0 - eps) ? 0.0 : 1.0 / (p * (1.0 - p)); });
}

Var softplus(const Var& a) {
  return unary(a, softplus_scalar, [](double x, double) { return sigmoid_scalar(x); });
}

Var silu(const Var& a) {
  return unary(
      a, [](double x) { return x * sigmoid_scalar(x); },
      [](double x, double) {
        const double s = sigmoid_scalar(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::size_t m = x.value().rows(), n = x.value().cols();
  EMO_CHECK(gamma.value().size() == n && beta.value().size() == n, ShapeError,
            "layer_norm: gamma/beta must match the last axis (" + std::to_string(n) + ")");
  Tensor out(x.shape());
  Tensor xhat({m, n});
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.value().data().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat.at(i, j) = (row[j] - mu) * inv_std[i];
      out[i * n + j] = gamma.value()[j] * xhat.at(i, j) + beta.value()[j];
    }
  }
  FlopCounter::add(cost::kLayerNorm * m * n);
  return make_op(std::move(out), {x, gamma, beta},
                 [x, gamma, beta, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Node& self) {
                   const Tensor& gy = self.grad;
                   if (gamma.requires_grad() || beta.requires_grad()) {
                     Tensor gg(gamma.shape()), gb(beta.shape());
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) {
                         gg[j] += gy[i * n + j] * xhat.at(i, j);
                         gb[j] += gy[i * n + j];
                       }
                     gamma.accumulate_grad(gg);
                     beta.accumulate_grad(gb);
                   }
                   if (x.requires_grad()) {
                     Tensor gx(x.shape());
                     const double inv_n = 1.0 / static_cast<double>(n);
                     for (std::size_t i = 0; i < m; ++i) {
                       double s1 = 0.0, s2 = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         const double gh = gy[i * n + j] * gamma.value()[j];
                         s1 += gh;
                         s2 += gh * xhat.at(i, j);
                       }
                       for (std::size_t j = 0; j < n; ++j) {
                         const double gh = gy[i * n + j] * gamma.value()[j];
                         gx[i * n + j] = inv_std[i] * (gh - inv_n * s1 - xhat.at(i, j) * inv_n * s2);
                       }
                     }
                     x.accumulate_grad(gx);
                   }
                 });
}

Var dwconv(const Var& x, const Var& kernel, const Var& bias) {
  const std::size_t len = x.value().rows(), d = x.value().cols();
  const std::size_t k = kernel.value().rows();
  EMO_CHECK(kernel.value().cols() == d && bias.value().size() == d, ShapeError,
            "dwconv: kernel must be (k, D) and bias (D) for D=" + std::to_string(d));
  EMO_CHECK(k % 2 == 1, ShapeError, "dwconv: kernel width must be odd");
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  const auto n = static_cast<std::ptrdiff_t>(len);
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  for (std::ptrdiff_t t = 0; t < n; ++t)
    for (std::size_t c = 0; c < d; ++c) {
      const auto tap = [&](std::ptrdiff_t o) {
        const std::ptrdiff_t src = t + o;
        if (src < 0 || src >= n) return 0.0;
        return kv.at(static_cast<std::size_t>(o + half), c) * xv.at(static_cast<std::size_t>(src), c);
      };
      // Mirrored taps are paired so a reversed sequence with a flipped kernel
      // reproduces the reversed output bit for bit.
      double s = bias.value()[c] + tap(0);
      for (std::ptrdiff_t o = 1; o <= half; ++o) s += tap(-o) + tap(o);
      out.at(static_cast<std::size_t>(t), c) = s;
    }
  FlopCounter::add(cost::dwconv(len, d, k));
  return make_op(std::move(out), {x, kernel, bias}, [x, kernel, bias, n, d, half](const Node& self) {
    const Tensor& gy = self.grad;
    Tensor gx(x.shape()), gk(kernel.shape()), gb(bias.shape());
    for (std::ptrdiff_t t = 0; t < n; ++t)
      for (std::size_t c = 0; c < d; ++c) {
        const double g = gy.at(static_cast<std::size_t>(t), c);
        gb[c] += g;
        for (std::ptrdiff_t o = -half; o <= half; ++o) {
          const std::ptrdiff_t src = t + o;
          if (src < 0 || src >= n) continue;
          const auto ks = static_cast<std::size_t>(o + half);
          const auto ss = static_cast<std::size_t>(src);
          gk.at(ks, c) += g * x.value().at(ss, c);
          gx.at(ss, c) += g * kernel.value().at(ks, c);
        }
      }
    x.accumulate_grad(gx);
    kernel.accumulate_grad(gk);
    bias.accumulate_grad(gb);
  });
}

Var softmax_rows(const Var& x) {
  Tensor out = kernels::softmax_rows(x.value().reshaped(as_matrix(x.value())), default_exec());
  FlopCounter::add(cost::kSoftmax * out.size());
  return make_op(std::move(out), {x}, [x](const Node& self) {
    const std::size_t m = self.value.dim(0), n = self.value.dim(1);
    Tensor g(x.shape());
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.value[i * n + j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] = self.value[i * n + j] * (self.grad[i * n + j] - dot);
    }
    x.accumulate_grad(g);
  });
}

Var gather_rows(const Var& x, const std::vector<std::size_t>& rows) {
  const std::size_t m = x.value().rows(), n = x.value().cols();
  Tensor out({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EMO_CHECK(rows[i] < m, ShapeError,
              "gather_rows: row " + std::to_string(rows[i]) + " out of range for " + std::to_string(m) + " rows");
    std::copy_n(x.value().data().data() + rows[i] * n, n, out.data().data() + i * n);
  }
  return make_op(std::move(out), {x}, [x, rows, n](const Node& self) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) g[rows[i] * n + j] += self.grad[i * n + j];
    x.accumulate_grad(g);
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
  const std::size_t m = x.value().rows(), n = x.value().cols();
  EMO_CHECK(begin + count <= m, ShapeError,
            "slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) + ") exceeds " +
                std::to_string(m) + " rows");
  Tensor out({count, n});
  std::copy_n(x.value().data().data() + begin * n, count * n, out.data().data());
  return make_op(std::move(out), {x}, [x, begin, count, n](const Node& self) {
    Tensor g(x.shape());
    std::copy_n(self.grad.data().data(), count * n, g.data().data() + begin * n);
    x.accumulate_grad(g);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  EMO_CHECK(!parts.empty(), ShapeError, "concat_rows: no inputs");
  const std::size_t n = parts.front().value().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    EMO_CHECK(p.value().cols() == n, ShapeError, "concat_rows: column counts differ");
    m += p.value().rows();
  }
  Tensor out({m, n});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data().data(), p.value().size(), out.data().data() + off);
    off += p.value().size();
  }
  return make_op(std::move(out), parts, [parts](const Node& self) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) {
        Tensor g(p.shape());
        std::copy_n(self.grad.data().data() + off, g.size(), g.data().data());
        p.accumulate_grad(g);
      }
      off += p.value().size();
    }
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  const std::size_t m = x.value().rows(), n = x.value().cols();
  EMO_CHECK(begin + count <= n, ShapeError, "slice_cols: range exceeds " + std::to_string(n) + " columns");
  Tensor out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = x.value()[i * n + begin + j];
  return make_op(std::move(out), {x}, [x, begin, count, m, n](const Node& self) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * n + begin + j] = self.grad.at(i, j);
    x.accumulate_grad(g);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  EMO_CHECK(!parts.empty(), ShapeError, "concat_cols: no inputs");
  const std::size_t m = parts.front().value().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    EMO_CHECK(p.value().rows() == m, ShapeError, "concat_cols: row counts differ");
    n += p.value().cols();
  }
  Tensor out({m, n});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.value().cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) out.at(i, off + j) = p.value()[i * c + j];
    off += c;
  }
  return make_op(std::move(out), parts, [parts, m, n](const Node& self) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t c = p.value().cols();
      if (p.requires_grad()) {
        Tensor g(p.shape());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] = self.grad[i * n + off + j];
        p.accumulate_grad(g);
      }
      off += c;
    }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  FlopCounter::add(x.value().size());
  return make_op(Tensor::scalar(s), {x}, [x](const Node& self) { x.accumulate_grad(Tensor(x.shape(), self.grad[0])); });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  FlopCounter::add(x.value().size());
  return make_op(Tensor::scalar(s / n), {x},
                 [x, n](const Node& self) { x.accumulate_grad(Tensor(x.shape(), self.grad[0] / n)); });
}

Var mean_rows(const Var& x) {
  const std::size_t m = x.value().rows(), n = x.value().cols();
  Tensor out({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x.value()[i * n + j];
  for (auto& v : out.data()) v /= static_cast<double>(m);
  FlopCounter::add(m * n);
  return make_op(std::move(out), {x}, [x, m, n](const Node& self) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] = self.grad[j] / static_cast<double>(m);
    x.accumulate_grad(g);
  });
}

Var sum_cols(const Var& x) {
  const std::size_t m = x.value().rows(), n = x.value().cols();
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += x.value()[i * n + j];
  FlopCounter::add(m * n);
  return make_op(std::move(out), {x}, [x, m, n](const Node& self) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] = self.grad[i];
    x.accumulate_grad(g);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

}  // namespace emo::num
