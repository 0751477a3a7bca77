#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ehdiscrim/tensor.hpp"

namespace ehd {

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t checked = 0;
  size_t skipped_frozen = 0;
};

// Compares the analytic gradient of a scalar-valued function against central
// finite differences, element by element. `fn` must rebuild its graph from
// the current parameter values, run backward, and return the loss value; it
// must be deterministic given the parameters.
template <typename S>
GradCheckReport grad_check(const std::function<S()>& fn,
                           const std::vector<Parameter<S>*>& params, S eps) {
  GradCheckReport rep;
  for (auto* p : params) p->zero_grad();
  S base = fn();
  (void)base;
  std::vector<Tensor<S>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<S>& p = *params[pi];
    if (!p.trainable) {
      ++rep.skipped_frozen;
      continue;
    }
    for (size_t k = 0; k < p.value.numel(); ++k) {
      const S saved = p.value.data[k];
      p.value.data[k] = saved + eps;
      for (auto* q : params) q->zero_grad();
      const double fplus = static_cast<double>(fn());
      p.value.data[k] = saved - eps;
      for (auto* q : params) q->zero_grad();
      const double fminus = static_cast<double>(fn());
      p.value.data[k] = saved;

      const double numeric = (fplus - fminus) / (2.0 * static_cast<double>(eps));
      const double an = static_cast<double>(analytic[pi].data[k]);
      const double denom = std::max({std::abs(an), std::abs(numeric), 1e-8});
      rep.max_rel_err = std::max(rep.max_rel_err, std::abs(an - numeric) / denom);
      ++rep.checked;
    }
  }
  // leave gradients in the analytic state
  for (size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
  return rep;
}

}  // namespace ehd
