#pragma once

#include <cmath>
#include <algorithm>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fineclip/tensor.hpp"

namespace fineclip {

struct GradCheckOptions {
  double eps = 1e-6;
  /// Coordinates probed per parameter tensor; 0 probes every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Returns max over probed coordinates of
/// |analytic − numeric| / (|analytic| + |numeric| + 1e-12).
///
/// `f` is re-evaluated from the current parameter values on every call.
inline double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                         const GradCheckOptions& opts = {}) {
  if (!(opts.eps > 0.0 && opts.eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: eps must lie in (0, 1e-3]");
  }
  for (auto& p : params) p.zero_grad();
  const Tensor y = f();
  if (y.numel() != 1) throw ShapeError("grad_check: function must be scalar-valued");
  if (!std::isfinite(y.item())) throw NumericError("grad_check: non-finite value at base point", 0);
  y.backward();

  std::mt19937_64 rng(opts.seed);
  double worst = 0.0;
  std::size_t global_index = 0;
  for (auto& p : params) {
    const std::vector<double> analytic =
        p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                     : std::vector<double>(p.numel(), 0.0);
    std::vector<std::size_t> coords(p.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opts.max_coords_per_tensor && coords.size() > opts.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_tensor);
    }
    auto values = p.mutable_data();
    for (std::size_t i : coords) {
      const double orig = values[i];
      values[i] = orig + opts.eps;
      const double up = f().item();
      values[i] = orig - opts.eps;
      const double down = f().item();
      values[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: non-finite value at coordinate " +
                               std::to_string(global_index + i),
                           global_index + i);
      }
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double err =
          std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
      worst = std::max(worst, err);
    }
    global_index += p.numel();
  }
  return worst;
}

/// Single-input form: f maps x to a scalar.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  x.set_requires_grad(true);
  return grad_check([&] { return f(x); }, {x}, GradCheckOptions{.eps = eps});
}

}  // namespace fineclip
