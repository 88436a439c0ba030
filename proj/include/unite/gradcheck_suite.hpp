#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unite/gradcheck.hpp"
#include "unite/model.hpp"

namespace unite {

/// n_f=4, t_s=16, d_s=8, grid_g=2, d_model=16, n_h=4, depth=2.
ModelConfig tiny_model_config();

struct OpCheck {
  std::string name;
  GradCheckResult result;
};

/// Finite-difference checks of every differentiable op, the model forward and
/// the full training loss (w.r.t. every model parameter), on random inputs
/// drawn from `seed`. Model-level checks use `config`.
std::vector<OpCheck> gradcheck_suite(const ModelConfig& config, std::uint64_t seed);

/// grad_check of x -> sum((x - 3)^2); analytic and numeric agree to rounding.
GradCheckResult quadratic_self_test();

}  // namespace unite
