#pragma once

#include <functional>
#include <vector>

#include "soke/grad.hpp"

namespace soke::grad {

struct GradCheckResult {
  Real max_rel_error = 0.0;
  Real max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

struct GradCheckOptions {
  Real eps = 1e-4;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  Real floor = 1e-6;
  /// Check at most this many entries per parameter (evenly strided); 0 = all.
  std::size_t max_entries_per_param = 0;
};

/// Compares reverse-mode gradients of `loss_fn` w.r.t. `params` against
/// central finite differences. `loss_fn` must rebuild the graph on each call.
GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params,
                                GradCheckOptions options = {});

}  // namespace soke::grad
