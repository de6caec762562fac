// Central-difference verification of analytic gradients.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ltsft/common.hpp"

namespace ltsft {

// A scalar function with its analytic gradient, evaluated at arbitrary
// points. Real selects the arithmetic width of the function itself; the
// difference quotient is always formed in 64-bit.
template <typename Real>
struct DifferentiableFn {
  std::function<double(const std::vector<Real>&)> value;
  std::function<std::vector<double>(const std::vector<Real>&)> gradient;
};

// max_i |analytic_i - central_i| / max(1, |analytic_i|)
template <typename Real>
double grad_check(const DifferentiableFn<Real>& f, const std::vector<Real>& point, double step) {
  if (step <= 0.0) fail(Errc::config, "grad_check: step must be positive");
  std::vector<double> analytic = f.gradient(point);
  if (analytic.size() != point.size()) fail(Errc::internal, "grad_check: gradient size mismatch");
  std::vector<Real> x = point;
  double worst = 0.0;
  for (size_t i = 0; i < point.size(); ++i) {
    const Real orig = x[i];
    x[i] = static_cast<Real>(static_cast<double>(orig) + step);
    double fp = f.value(x);
    x[i] = static_cast<Real>(static_cast<double>(orig) - step);
    double fm = f.value(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) fail(Errc::numeric, "grad_check: non-finite function value");
    double central = (fp - fm) / (2.0 * step);
    double rel = std::abs(analytic[i] - central) / std::max(1.0, std::abs(analytic[i]));
    if (rel > worst) worst = rel;
  }
  return worst;
}

}  // namespace ltsft
