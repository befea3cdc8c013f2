#include "artistid/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "artistid/error.hpp"

namespace artistid {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const std::function<double()>& loss, std::span<double> point,
                                  std::span<const double> analytic, double tolerance, double step) {
  if (point.size() != analytic.size()) throw ShapeError("gradient check: size mismatch");
  GradCheckReport report;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + step;
    const double up = loss();
    point[i] = saved - step;
    const double down = loss();
    point[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double rel = relative_error(analytic[i], numeric);
    report.max_abs_error = std::max(report.max_abs_error, std::abs(analytic[i] - numeric));
    if (rel > report.max_rel_error || report.checked == 0) {
      report.max_rel_error = std::max(rel, report.max_rel_error);
      if (rel >= report.max_rel_error) report.worst_index = i;
    }
    ++report.checked;
  }
  report.passed = std::isfinite(report.max_rel_error) && report.max_rel_error < tolerance;
  return report;
}

}  // namespace artistid
