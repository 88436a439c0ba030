#pragma once

#include <functional>
#include <span>
#include <vector>

#include "unite/tensor.hpp"

namespace unite {

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the reverse-mode gradient of `f` at `inputs` with central
/// differences (f(x+eps) - f(x-eps)) / (2 eps), element by element.
///
/// The relative error of one element is |analytic - numeric| divided by
/// max(|analytic|, |numeric|, 1e-3); the floor keeps near-zero gradients from
/// turning rounding noise into large ratios. Only inputs that require a
/// gradient are probed.
GradCheckResult grad_check(const ScalarFn& f, std::span<const Tensor> inputs, double eps = 1e-5);

}  // namespace unite
