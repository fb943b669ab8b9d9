#include "eaxl/adam.hpp"

#include <cmath>

#include "eaxl/error.hpp"

namespace eaxl {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config) {
  if (grad.shape() != param.shape()) {
    throw DimensionError("adam_step: gradient " + shape_to_string(grad.shape()) +
                         " does not match parameter " + shape_to_string(param.shape()));
  }
  if (state.m.shape() != param.shape()) state.m = Tensor(param.shape());
  if (state.v.shape() != param.shape()) state.v = Tensor(param.shape());
  state.t += 1;
  const double b1 = config.beta1, b2 = config.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double m = b1 * state.m[i] + (1.0 - b1) * g;
    const double v = b2 * state.v[i] + (1.0 - b2) * g * g;
    state.m[i] = static_cast<Scalar>(m);
    state.v[i] = static_cast<Scalar>(v);
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    const double update = config.lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    // A zero update leaves the parameter untouched, including the sign of zero.
    if (update != 0.0) param[i] = static_cast<Scalar>(param[i] - update);
  }
}

void Adam::step(std::span<Parameter* const> params) {
  if (states_.empty()) states_.resize(params.size());
  if (states_.size() != params.size()) {
    throw DimensionError("Adam::step: parameter list changed size between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_step(params[i]->value, params[i]->grad, states_[i], config_);
  }
}

}  // namespace eaxl
