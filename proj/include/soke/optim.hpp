#pragma once

#include <cstdint>
#include <vector>

#include "soke/grad.hpp"

namespace soke::grad {

/// Linear warmup followed by cosine decay from base_lr to min_lr over total_steps.
struct CosineSchedule {
  Real base_lr = 2e-4;
  Real min_lr = 0.0;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;

  Real at(std::size_t step) const;
};

struct AdamConfig {
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  Real weight_decay = 0.0;  // decoupled (AdamW)
  Real clip_norm = 0.0;     // global gradient-norm clip, 0 disables
};

struct OptimizerState {
  std::vector<std::vector<Real>> first_moment;
  std::vector<std::vector<Real>> second_moment;
  std::vector<std::size_t> steps;  // per parameter; a parameter with an all-zero gradient is not stepped
  std::size_t step = 0;
};

/// AdamW over a fixed parameter list. A parameter whose gradient is entirely
/// zero (or absent) is left untouched and its moments are not advanced.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config, CosineSchedule schedule);

  void zero_grad();
  /// Applies one update using the gradients currently stored on the parameters.
  void step();
  Real current_lr() const { return schedule_.at(state_.step); }
  const OptimizerState& state() const { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  CosineSchedule schedule_;
  OptimizerState state_;
};

Real global_grad_norm(const std::vector<Tensor>& params);

}  // namespace soke::grad
