#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "votacast/inference/hmc.hpp"

namespace votacast::inference {

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t worst_coordinate = 0;
};

/// Compares the target's gradient with central differences at one point.
/// Coordinate d is perturbed by h * scale[d] (scale 1 when none is given),
/// and the error is measured relative to max(|analytic|, |numeric|, 1) on
/// that standardized scale.
template <LogDensityTarget Target>
GradientCheck check_gradient(const Target& target, std::span<const double> x, double h = 1e-5,
                             std::span<const double> scale = {}) {
  const std::size_t n = target.dimension();
  std::vector<double> grad(n), probe(x.begin(), x.end());
  target.log_density_gradient(x, grad);
  GradientCheck out;
  for (std::size_t d = 0; d < n; ++d) {
    const double sd = scale.empty() ? 1.0 : scale[d];
    probe[d] = x[d] + h * sd;
    const double up = target.log_density(probe);
    probe[d] = x[d] - h * sd;
    const double down = target.log_density(probe);
    probe[d] = x[d];
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grad[d] * sd;
    const double err = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1.0});
    if (err > out.max_relative_error) {
      out.max_relative_error = err;
      out.worst_coordinate = d;
    }
  }
  return out;
}

/// Worst error over `points` draws from N(center, scale^2) per coordinate.
template <LogDensityTarget Target>
GradientCheck check_gradient_random(const Target& target, std::span<const double> center, double scale, int points,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  GradientCheck worst;
  std::vector<double> x(center.size());
  for (int k = 0; k < points; ++k) {
    for (std::size_t d = 0; d < x.size(); ++d) x[d] = center[d] + scale * z(rng);
    const auto r = check_gradient(target, std::span<const double>(x));
    if (r.max_relative_error >= worst.max_relative_error) worst = r;
  }
  return worst;
}

}  // namespace votacast::inference
