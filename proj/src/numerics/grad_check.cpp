#include "emo/numerics/grad_check.hpp"

#include <cmath>

#include "emo/error.hpp"

namespace emo::num {

namespace {

double evaluate(const std::function<Var()>& f, std::size_t param, std::size_t index) {
  Tape::Pause pause;
  const double v = f().value().item();
  EMO_CHECK(std::isfinite(v), DomainError,
            "grad_check: non-finite function value when perturbing parameter " + std::to_string(param) +
                " coordinate " + std::to_string(index));
  return v;
}


std::vector<std::size_t> coordinates(std::size_t n, std::size_t max_coords) {
  std::vector<std::size_t> idx;
  if (max_coords == 0 || n <= max_coords) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
  } else if (max_coords == 1) {
    idx.push_back(0);
  } else {
    for (std::size_t k = 0; k < max_coords; ++k) idx.push_back(k * (n - 1) / (max_coords - 1));
  }
  return idx;
}

}  // namespace

GradCheckResult grad_check_params(const std::function<Var()>& f, const std::vector<Var>& params, double eps,
                                  std::size_t max_coords) {
  EMO_CHECK(eps > 0.0, DomainError, "grad_check: eps must be positive");
  std::vector<Var> leaves = params;
  for (auto& p : leaves) p.zero_grad();
  {
    Tape tape;
    Tape::Scope scope(tape);
    Var out = f();
    EMO_CHECK(std::isfinite(out.value().item()), DomainError, "grad_check: non-finite function value at x");
    if (out.requires_grad()) tape.backward(out);
  }
  GradCheckResult result;
  for (std::size_t p = 0; p < leaves.size(); ++p) {
    Var& leaf = leaves[p];
    const Tensor analytic = leaf.has_grad() ? leaf.grad() : Tensor(leaf.shape());
    for (std::size_t i : coordinates(leaf.value().size(), max_coords)) {
      const double orig = leaf.value()[i];
      const auto at = [&](double step) {
        leaf.mutable_value()[i] = orig + step;
        return evaluate(f, p, i);
      };
      // Fourth-order central stencil: truncation error O(eps^4), so eps can
      // be large enough that cancellation stays near machine precision.
      const double numeric = (8.0 * (at(eps) - at(-eps)) - (at(2.0 * eps) - at(-2.0 * eps))) / (12.0 * eps);
      leaf.mutable_value()[i] = orig;
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      if (err > result.max_rel_error) result = {err, p, i, a, numeric};
    }
    leaf.zero_grad();
  }
  return result;
}

GradCheckResult grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double eps) {
  Var leaf = Var::parameter(x);
  return grad_check_params([&] { return f(leaf); }, {leaf}, eps);
}

}  // namespace emo::num
