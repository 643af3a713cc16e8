#include "ss3d/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ss3d/common/error.hpp"

namespace ss3d::ad {
namespace {

double evaluate(const ScalarFunction& fn, const Array& x) {
  Tape tape;
  Var input = tape.constant(x);
  return fn(tape, input).item();
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const ScalarFunction& fn, const Array& point, double step,
                           std::optional<std::span<const std::size_t>> components) {
  require(step > 0.0, "E_ARG", "grad_check step must be positive");
  GradCheckReport report;
  report.step = step;

  Tape tape;
  Var x = tape.variable(point);
  Var y = fn(tape, x);
  tape.backward(y);
  const Array& grad = x.grad();

  if (components) {
    report.components.assign(components->begin(), components->end());
  } else {
    report.components.resize(point.size());
    std::iota(report.components.begin(), report.components.end(), std::size_t{0});
  }

  Array probe = point;
  for (std::size_t idx : report.components) {
    require(idx < point.size(), "E_INDEX", "grad_check component out of range");
    const double x0 = probe[idx];
    probe[idx] = x0 + step;
    const double fp = evaluate(fn, probe);
    probe[idx] = x0 - step;
    const double fm = evaluate(fn, probe);
    probe[idx] = x0;

    const double numeric = (fp - fm) / (2.0 * step);
    const double analytic = grad[idx];
    double err = 0.0;
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(analytic)) {
      ++report.nonfinite;
      err = std::numeric_limits<double>::infinity();
    } else {
      err = relative_error(analytic, numeric);
    }
    report.analytic.push_back(analytic);
    report.numeric.push_back(numeric);
    report.relative_errors.push_back(err);
    report.max_relative_error = std::max(report.max_relative_error, err);
  }
  return report;
}

}  // namespace ss3d::ad
