#include "cbamnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cbamnet/trace.hpp"

namespace cbamnet {

double grad_check(const std::function<Tensor<double>()>& f, const std::vector<GradProbe>& probes,
                  double eps) {
  if (eps <= 0) throw std::invalid_argument("grad_check eps must be positive");
  for (const auto& p : probes) {
    p.tensor.node().requires_grad = true;
    p.tensor.node().grad.clear();
  }
  {
    Trace<double> trace;
    Tensor<double> loss = f();
    if (loss.numel() != 1) throw ShapeError("grad_check needs a scalar-valued function");
    trace.backward(loss);
  }

  NoTrace<double> off;
  double worst = 0.0;
  for (const auto& p : probes) {
    auto values = p.tensor.node().data.data();
    const double analytic = p.tensor.has_grad() ? p.tensor.grad()[p.index] : 0.0;
    const double saved = values[p.index];
    values[p.index] = saved + eps;
    const double up = f().item();
    values[p.index] = saved - eps;
    const double down = f().item();
    values[p.index] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double err =
        std::abs(analytic - numeric) / std::max(1e-12, std::abs(analytic) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x,
                  double eps) {
  return grad_check([&] { return f(x); }, probes_for({x}), eps);
}

std::vector<GradProbe> probes_for(const std::vector<Tensor<double>>& tensors,
                                  std::size_t per_tensor, std::uint64_t seed) {
  std::vector<GradProbe> out;
  Rng rng(seed);
  for (const auto& t : tensors) {
    const std::size_t n = t.numel();
    if (per_tensor == 0 || per_tensor >= n) {
      for (std::size_t i = 0; i < n; ++i) out.push_back({t, i});
      continue;
    }
    for (std::size_t k = 0; k < per_tensor; ++k) out.push_back({t, rng.below(n)});
  }
  return out;
}

std::vector<GradProbe> random_probes(const std::vector<Tensor<double>>& tensors, std::size_t count,
                                     std::uint64_t seed) {
  std::size_t total = 0;
  for (const auto& t : tensors) total += t.numel();
  if (total == 0) return {};
  Rng rng(seed);
  std::vector<GradProbe> out;
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t flat = rng.below(total);
    for (const auto& t : tensors) {
      if (flat < t.numel()) {
        out.push_back({t, flat});
        break;
      }
      flat -= t.numel();
    }
  }
  return out;
}

}  // namespace cbamnet
