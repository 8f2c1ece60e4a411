#pragma once

// Central finite-difference oracle for taped gradients. Independent of the
// backward rules it checks: it only re-runs the forward pass.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "numcore/tensor.hpp"

namespace kglp::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// `loss_fn` must rebuild the scalar loss from the current parameter values
/// and be deterministic. Returns the worst relative error over all entries.
inline GradCheckResult grad_check(std::vector<num::Tensor> params, const std::function<num::Tensor()>& loss_fn,
                                  double h = 1e-5, double floor = 1e-6) {
  for (auto& p : params) p.zero_grad();
  num::Graph::active().clear();
  num::backward(loss_fn());

  GradCheckResult result;
  for (auto& p : params) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      double plus, minus;
      {
        num::NoGradGuard guard;
        data[i] = saved + h;
        plus = loss_fn().item();
        data[i] = saved - h;
        minus = loss_fn().item();
      }
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double denom = std::max({std::fabs(numeric), std::fabs(analytic[i]), floor});
      result.max_rel_error = std::max(result.max_rel_error, std::fabs(numeric - analytic[i]) / denom);
      ++result.checked;
    }
    p.zero_grad();
  }
  return result;
}

}  // namespace kglp::testing
