#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

namespace mfield::ad {

struct NonDeterministicFunction : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;

  std::string summary() const {
    return "max rel err " + std::to_string(max_relative_error) + " at " + std::to_string(worst_index) +
           " (analytic " + std::to_string(worst_analytic) + ", numeric " + std::to_string(worst_numeric) + ")";
  }
};

/// Compares analytic derivatives against central differences.
///
/// `loss` evaluates the objective in 64-bit reading the current contents of
/// `point`; each coordinate is perturbed in place by +-step and restored. The
/// error per coordinate is |analytic - numeric| / max(|analytic|, 1e-8).
template <class F>
FiniteDiffReport finite_diff_check(F&& loss, std::span<double> point, std::span<const double> analytic, double step) {
  if (analytic.size() != point.size()) throw std::invalid_argument("analytic gradient size mismatch");
  const double base = loss();
  const double again = loss();
  if (!(base == again || (std::isnan(base) && std::isnan(again)))) {
    throw NonDeterministicFunction("objective differs across repeated evaluation (" + std::to_string(base) +
                                   " vs " + std::to_string(again) + ")");
  }
  FiniteDiffReport report;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x0 = point[i];
    point[i] = x0 + step;
    const double fp = loss();
    point[i] = x0 - step;
    const double fm = loss();
    point[i] = x0;
    const double numeric = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric) / std::max(std::abs(analytic[i]), 1e-8);
    if (report.checked == 0 || err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_index = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
    ++report.checked;
  }
  return report;
}

}  // namespace mfield::ad
