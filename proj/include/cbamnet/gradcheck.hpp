#pragma once

#include <functional>
#include <vector>

#include "cbamnet/tensor.hpp"

namespace cbamnet {

/// One coordinate of one tensor to probe with central differences.
struct GradProbe {
  Tensor<double> tensor;
  std::size_t index = 0;
};

/// Compares traced gradients against central differences
/// (f(x + eps) - f(x - eps)) / 2eps at every probe and returns the largest
/// |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
///
/// `f` is evaluated once under a trace for the analytic gradient and twice
/// per probe for the numeric one. Probed tensors must be leaves; their
/// requires_grad flag is switched on and their grads are cleared.
double grad_check(const std::function<Tensor<double>()>& f, const std::vector<GradProbe>& probes,
                  double eps = 1e-5);

/// Every coordinate of x.
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x,
                  double eps = 1e-5);

/// All coordinates of each tensor, or `per_tensor` randomly chosen ones when
/// per_tensor > 0 and smaller than the tensor.
std::vector<GradProbe> probes_for(const std::vector<Tensor<double>>& tensors,
                                  std::size_t per_tensor = 0, std::uint64_t seed = 0);

/// `count` coordinates drawn uniformly over the concatenation of `tensors`.
std::vector<GradProbe> random_probes(const std::vector<Tensor<double>>& tensors, std::size_t count,
                                     std::uint64_t seed);

}  // namespace cbamnet
