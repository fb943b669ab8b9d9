#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "eaxl/autodiff.hpp"

namespace eaxl {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
};

/// Scalar loss built on the given tape from the input variable.
using ScalarFn = std::function<Var(Tape&, Var)>;
/// Scalar loss built on the given tape from captured parameters.
using LossFn = std::function<Var(Tape&)>;

/// Central differences per coordinate against the tape gradient. Relative
/// error uses max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckResult finite_diff_check(const ScalarFn& f, const Tensor& x, double h);

/// Same check over every coordinate of every listed parameter.
GradCheckResult finite_diff_check(const LossFn& loss, std::span<Parameter* const> params,
                                  double h);

}  // namespace eaxl
