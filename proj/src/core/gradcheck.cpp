#include "eaxl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace eaxl {

namespace {

void record_error(GradCheckResult& result, std::size_t index, double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  const double rel = std::abs(analytic - numeric) / denom;
  if (rel >= result.max_rel_error) {
    result.max_rel_error = rel;
    result.worst_index = index;
    result.analytic = analytic;
    result.numeric = numeric;
  }
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.leaf(x);
    Var loss = f(tape, xv);
    tape.backward(loss);
    analytic = tape.grad(xv);
  }
  auto eval = [&](const Tensor& point) {
    Tape tape(false);
    return static_cast<double>(f(tape, tape.constant(point)).value()[0]);
  };
  GradCheckResult result;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + static_cast<Scalar>(h);
    const double plus = eval(probe);
    probe[i] = x[i] - static_cast<Scalar>(h);
    const double minus = eval(probe);
    probe[i] = x[i];
    record_error(result, i, analytic[i], (plus - minus) / (2 * h));
  }
  return result;
}

GradCheckResult finite_diff_check(const LossFn& loss, std::span<Parameter* const> params,
                                  double h) {
  for (Parameter* p : params) p->grad = Tensor(p->value.shape());
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  auto eval = [&] {
    Tape tape(false);
    return static_cast<double>(loss(tape).value()[0]);
  };
  GradCheckResult result;
  std::size_t flat = 0;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i, ++flat) {
      const Scalar saved = p->value[i];
      p->value[i] = saved + static_cast<Scalar>(h);
      const double plus = eval();
      p->value[i] = saved - static_cast<Scalar>(h);
      const double minus = eval();
      p->value[i] = saved;
      record_error(result, flat, p->grad[i], (plus - minus) / (2 * h));
    }
  }
  return result;
}

}  // namespace eaxl
