#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace artistid {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = false;
};

/// |a - b| / max(|a|, |b|, floor). The floor keeps entries whose true
/// gradient is ~0 from dominating the report.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Compares `analytic` against central differences of `loss` taken by
/// perturbing each entry of `point` in place by +-step (restored afterwards).
/// `loss` must re-evaluate the objective from the current contents of `point`.
GradCheckReport finite_diff_check(const std::function<double()>& loss, std::span<double> point,
                                  std::span<const double> analytic, double tolerance, double step = 1e-4);

}  // namespace artistid
