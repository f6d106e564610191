#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "canht/nn/tensor.hpp"

namespace canht::nn {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// One differentiation target: a tensor the scalar functional depends on,
// paired with the analytic gradient claimed by the backward pass under test.
struct GradCheckTarget {
  std::string name;
  Tensor4<double>* value;
  const Tensor4<double>* analytic;
};

// Central-difference check of d(scalar)/d(element) for every element of every
// target, at double precision. `scalar_fn` must re-evaluate the functional
// from the targets' current contents. Elements are perturbed by
// eps * max(1, |theta|); the relative error uses max(|analytic|, |numeric|, 1)
// as denominator so zero-gradient regions compare absolutely.
inline GradCheckResult finite_diff_check(
    const std::function<double()>& scalar_fn,
    const std::vector<GradCheckTarget>& targets, double eps = 1e-6) {
  GradCheckResult res;
  for (const GradCheckTarget& t : targets) {
    require_shape(t.analytic->same_shape(*t.value),
                  "gradient check: analytic gradient shape mismatch for " + t.name);
    const std::int64_t n = t.value->size();
    for (std::int64_t i = 0; i < n; ++i) {
      double& theta = t.value->v[static_cast<std::size_t>(i)];
      const double orig = theta;
      const double h = eps * std::max(1.0, std::abs(orig));
      theta = orig + h;
      const double f_plus = scalar_fn();
      theta = orig - h;
      const double f_minus = scalar_fn();
      theta = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double analytic = t.analytic->v[static_cast<std::size_t>(i)];
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1.0});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_tensor = t.name;
        res.worst_index = i;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace canht::nn
