#include "soke/optim.hpp"

#include <cmath>
#include <numbers>

#include "soke/error.hpp"

namespace soke::grad {

Real CosineSchedule::at(std::size_t step) const {
  if (warmup_steps > 0 && step < warmup_steps) {
    return base_lr * Real(step + 1) / Real(warmup_steps);
  }
  const std::size_t span = total_steps > warmup_steps ? total_steps - warmup_steps : 1;
  const Real progress = std::min<Real>(1.0, Real(step - warmup_steps) / Real(span));
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

Adam::Adam(std::vector<Tensor> params, AdamConfig config, CosineSchedule schedule)
    : params_(std::move(params)), config_(config), schedule_(schedule) {
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw GradError("optimizer parameter does not require grad");
    state_.first_moment.emplace_back(p.size(), 0.0);
    state_.second_moment.emplace_back(p.size(), 0.0);
    state_.steps.push_back(0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Real global_grad_norm(const std::vector<Tensor>& params) {
  Real s = 0.0;
  for (const auto& p : params) {
    for (Real g : p.grad()) s += g * g;
  }
  return std::sqrt(s);
}

void Adam::step() {
  const Real lr = schedule_.at(state_.step);
  Real clip = 1.0;
  if (config_.clip_norm > 0.0) {
    const Real norm = global_grad_norm(params_);
    if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    auto grad = p.grad();
    bool any = false;
    for (Real g : grad) {
      if (g != 0.0) {
        any = true;
        break;
      }
    }
    if (!any) continue;
    const std::size_t t = ++state_.steps[k];
    const Real bc1 = 1.0 - std::pow(config_.beta1, Real(t));
    const Real bc2 = 1.0 - std::pow(config_.beta2, Real(t));
    auto& m = state_.first_moment[k];
    auto& v = state_.second_moment[k];
    auto value = p.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const Real g = grad[i] * clip;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const Real update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
      value[i] -= lr * (update + config_.weight_decay * value[i]);
      if (!std::isfinite(value[i])) throw NonFiniteError("optimizer step produced a non-finite parameter");
    }
  }
  ++state_.step;
}

}  // namespace soke::grad
