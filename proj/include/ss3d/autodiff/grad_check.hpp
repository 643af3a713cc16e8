#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ss3d/autodiff/tape.hpp"

namespace ss3d::ad {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::vector<double> relative_errors;  // one per checked component
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<std::size_t> components;  // flat indices that were checked
  double step = 0.0;
  /// Components whose function values at x +- h were not finite.
  std::size_t nonfinite = 0;

  bool passed(double tolerance) const { return nonfinite == 0 && max_relative_error < tolerance; }
};

/// Builds a scalar on the given tape from the input variable.
using ScalarFunction = std::function<Var(Tape&, Var)>;

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients against central differences
/// (f(x+h) - f(x-h)) / 2h. When `components` is given only those flat
/// indices are perturbed.
GradCheckReport grad_check(const ScalarFunction& fn, const Array& point, double step = 1e-5,
                           std::optional<std::span<const std::size_t>> components = std::nullopt);

}  // namespace ss3d::ad
