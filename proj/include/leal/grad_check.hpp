#pragma once

#include <functional>
#include <string>

#include "leal/params.hpp"
#include "leal/tensor.hpp"

namespace leal {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/**
 * Compares reverse-mode gradients with central differences.
 *
 * The error for one coordinate is |analytic - numeric| / max(1, |analytic|); the
 * maximum over all coordinates is reported. `f` must rebuild its graph from the
 * current parameter values on every call. Throws if `f` is non-finite near the point.
 */
GradCheckResult grad_check(const std::function<Tensor()>& f, const ParamList& params, double eps = 1e-6);

/// Single-input convenience form.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-6);

}  // namespace leal
