#include "soke/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace soke::grad {

GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params,
                                GradCheckOptions options) {
  for (auto p : params) p.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<Real>> analytic;
  for (const auto& p : params) {
    std::vector<Real> g(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k];
    auto value = p.mutable_value();
    std::size_t stride = 1;
    if (options.max_entries_per_param > 0 && value.size() > options.max_entries_per_param) {
      stride = (value.size() + options.max_entries_per_param - 1) / options.max_entries_per_param;
    }
    for (std::size_t i = 0; i < value.size(); i += stride) {
      const Real saved = value[i];
      value[i] = saved + options.eps;
      const Real plus = loss_fn().item();
      value[i] = saved - options.eps;
      const Real minus = loss_fn().item();
      value[i] = saved;
      const Real numeric = (plus - minus) / (2.0 * options.eps);
      const Real a = analytic[k][i];
      const Real abs_err = std::abs(a - numeric);
      const Real rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
      ++result.checked;
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = k;
        result.worst_index = i;
      }
    }
  }
  for (auto p : params) p.zero_grad();
  return result;
}

}  // namespace soke::grad
