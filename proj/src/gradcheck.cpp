#include "twinsight/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace twinsight {

GradCheckReport check_gradient(const std::function<double(std::span<const double>)>& f,
                               std::span<const double> point, std::span<const double> analytic,
                               double step, double rel_tol, double abs_tol) {
  if (point.size() != analytic.size())
    throw std::invalid_argument("check_gradient: gradient length does not match point");
  if (!(step > 0.0)) throw std::invalid_argument("check_gradient: step must be > 0");

  std::vector<double> x(point.begin(), point.end());
  GradCheckReport report;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f(x);
    x[i] = saved - step;
    const double down = f(x);
    x[i] = saved;

    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric);
    const bool ok =
        err <= rel_tol * std::max(std::abs(analytic[i]), std::abs(numeric)) || err <= abs_tol;
    if (!ok) ++report.failures;
    if (err > report.max_abs_error) {
      report.max_abs_error = err;
      report.worst_index = i;
    }
    ++report.checked;
  }
  return report;
}

}  // namespace twinsight
