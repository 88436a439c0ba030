#include "unite/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "unite/errors.hpp"

namespace unite {

GradCheckResult grad_check(const ScalarFn& f, std::span<const Tensor> inputs, double eps) {
  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  const Tensor out = f(probe);
  if (out.size() != 1) throw DimensionError("grad_check: function must return a scalar");
  const Gradients grads = backward(out);

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    const auto analytic = grads.of(inputs[i]);
    std::vector<double> values(inputs[i].data().begin(), inputs[i].data().end());
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double original = values[k];
      values[k] = original + eps;
      probe[i] = Tensor::constant(inputs[i].shape(), values);
      const double up = f(probe).item();
      values[k] = original - eps;
      probe[i] = Tensor::constant(inputs[i].shape(), values);
      const double down = f(probe).item();
      values[k] = original;

      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-3});
      const double rel = std::abs(analytic[k] - numeric) / denom;
      if (rel >= result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_input = i;
        result.worst_index = k;
        result.analytic = analytic[k];
        result.numeric = numeric;
      }
    }
    probe[i] = inputs[i];
  }
  return result;
}

}  // namespace unite
