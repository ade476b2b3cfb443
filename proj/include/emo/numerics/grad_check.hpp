#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "emo/numerics/autograd.hpp"

namespace emo::num {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients of a scalar function against five-point
// central differences with step eps. Per coordinate the error is
//   |analytic - numeric| / (|analytic| + |numeric| + 1e-12)
// and the maximum is returned. Throws DomainError naming the coordinate if a
// perturbed evaluation is not finite.
GradCheckResult grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double eps);

// Same check over every coordinate of several parameters that `f` closes
// over. Parameter values are perturbed in place and restored afterwards.
// max_coords > 0 checks at most that many evenly strided coordinates per
// parameter, always including the first and last.
GradCheckResult grad_check_params(const std::function<Var()>& f, const std::vector<Var>& params, double eps,
                                  std::size_t max_coords = 0);

}  // namespace emo::num
