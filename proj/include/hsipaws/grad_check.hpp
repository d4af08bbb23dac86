#pragma once

#include <algorithm>
#include <cmath>

#include "hsipaws/tensor.hpp"

namespace hsipaws {

// Central-difference check of the analytic gradients stored in `params`.
// The caller runs forward+backward first so that every grad buffer holds the
// analytic gradient of the scalar returned by `f` at the current values.
// `f` must be deterministic; re-evaluations perturb one coordinate at a time.
// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
template <typename S, typename F>
double grad_check(F&& f, ParamStore<S>& params, double h) {
  double worst = 0.0;
  for (auto& [name, entry] : params) {
    for (Index i = 0; i < entry.value.size(); ++i) {
      const S original = entry.value[i];
      entry.value[i] = original + static_cast<S>(h);
      const double f_plus = static_cast<double>(f());
      entry.value[i] = original - static_cast<S>(h);
      const double f_minus = static_cast<double>(f());
      entry.value[i] = original;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        throw NumericError("grad_check: non-finite objective at parameter " + name);
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double analytic = static_cast<double>(entry.grad[i]);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

// Same check for a single standalone tensor (used for layer-level tests where
// the differentiated quantity is an input rather than a named parameter).
template <typename S, typename F>
double grad_check_tensor(F&& f, Tensor<S>& value, const Tensor<S>& analytic_grad, double h) {
  double worst = 0.0;
  for (Index i = 0; i < value.size(); ++i) {
    const S original = value[i];
    value[i] = original + static_cast<S>(h);
    const double f_plus = static_cast<double>(f());
    value[i] = original - static_cast<S>(h);
    const double f_minus = static_cast<double>(f());
    value[i] = original;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
      throw NumericError("grad_check: non-finite objective");
    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double analytic = static_cast<double>(analytic_grad[i]);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace hsipaws
