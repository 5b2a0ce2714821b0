#pragma once

// Central finite differences against autograd, shared by the test binaries.

#include <torch/torch.h>

#include <algorithm>
#include <functional>

namespace mostnet::testing {

using ScalarFn = std::function<torch::Tensor(const torch::Tensor&)>;

inline torch::Tensor numeric_gradient(const ScalarFn& f, torch::Tensor x, double step) {
  torch::NoGradGuard guard;
  auto grad = torch::zeros_like(x);
  auto flat = x.view(-1);
  auto g = grad.view(-1);
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + step;
    const double up = f(x).item<double>();
    flat[i] = orig - step;
    const double down = f(x).item<double>();
    flat[i] = orig;
    g[i] = (up - down) / (2 * step);
  }
  return grad;
}

struct GradientComparison {
  double max_error = 0.0;  // max |analytic - numeric| / max |numeric|
  double l2_error = 0.0;   // ||analytic - numeric|| / ||numeric||
};

inline GradientComparison compare_gradients(const ScalarFn& f, const torch::Tensor& x0, double step = 1e-3) {
  auto x = x0.clone().requires_grad_(true);
  f(x).backward();
  const auto analytic = x.grad().detach();
  const auto numeric = numeric_gradient(f, x0.clone(), step);
  const auto diff = analytic - numeric;
  return {diff.abs().max().item<double>() / std::max(numeric.abs().max().item<double>(), 1e-12),
          diff.norm().item<double>() / std::max(numeric.norm().item<double>(), 1e-12)};
}

/// max |analytic - numeric| / max |numeric|.
inline double gradient_error(const ScalarFn& f, const torch::Tensor& x0, double step = 1e-3) {
  return compare_gradients(f, x0, step).max_error;
}

}  // namespace mostnet::testing
