#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "eaxl/tensor.hpp"

namespace eaxl {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update of `param` in place.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config);

/// Adam over a fixed list of parameters; state i belongs to parameter i.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::span<Parameter* const> params);

  const AdamConfig& config() const { return config_; }
  AdamConfig& config() { return config_; }
  const std::vector<AdamState>& states() const { return states_; }

 private:
  AdamConfig config_;
  std::vector<AdamState> states_;
};

}  // namespace eaxl
