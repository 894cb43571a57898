#pragma once

#include <functional>
#include <span>
#include <vector>

namespace twinsight {

struct GradCheckReport {
  std::size_t checked = 0;      // coordinates compared
  std::size_t failures = 0;     // coordinates outside tolerance
  double max_abs_error = 0.0;   // worst |analytic - numeric|
  std::size_t worst_index = 0;  // coordinate of the worst disagreement

  bool passed() const { return failures == 0; }
};

// Central-difference check: for every coordinate of `point`, evaluates
// (f(x+h e_i) - f(x-h e_i)) / 2h and compares against analytic[i]. A
// coordinate passes when |a - n| <= rel_tol * max(|a|, |n|) or |a - n| <=
// abs_tol (the floor absorbs difference noise where the true gradient is ~0).
GradCheckReport check_gradient(const std::function<double(std::span<const double>)>& f,
                               std::span<const double> point, std::span<const double> analytic,
                               double step = 1e-6, double rel_tol = 1e-5, double abs_tol = 1e-8);

}  // namespace twinsight
