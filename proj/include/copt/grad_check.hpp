#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "copt/tensor.hpp"

namespace copt {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  bool passed = true;
};

/// Compares the taped gradient of scalar `f` at `x` with central differences.
///
/// A coordinate passes when its absolute error is within `abs_floor` or its
/// relative error |ad - fd| / max(|ad|, |fd|) is within `tol_rel`. The step
/// actually taken is re-measured after rounding `x +- h` to T, and function
/// values are read out in double.
template <typename T, typename F>
GradCheckReport grad_check(F&& f, const BasicTensor<T>& x, double h, double tol_rel, double abs_floor = 1e-6) {
  BasicTensor<T> probe = x.clone();
  probe.set_requires_grad(true);
  probe.zero_grad();
  std::vector<T> analytic(x.numel(), T(0));
  {
    Tape tape;
    TapeScope scope(tape);
    BasicTensor<T> loss = f(probe);
    if (loss.requires_grad()) {
      tape.backward(loss);
      if (probe.has_grad()) analytic.assign(probe.grad().begin(), probe.grad().end());
    }
  }

  GradCheckReport report;
  report.coordinates = x.numel();
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    BasicTensor<T> plus = x.clone();
    BasicTensor<T> minus = x.clone();
    plus[i] = static_cast<T>(static_cast<double>(x[i]) + h);
    minus[i] = static_cast<T>(static_cast<double>(x[i]) - h);
    const double step = static_cast<double>(plus[i]) - static_cast<double>(minus[i]);
    const double fp = static_cast<double>(f(plus).item());
    const double fm = static_cast<double>(f(minus).item());
    const double fd = (fp - fm) / step;
    const double ad = static_cast<double>(analytic[i]);
    const double abs_err = std::abs(ad - fd);
    const double denom = std::max(std::abs(ad), std::abs(fd));
    const double rel_err = denom > 0.0 ? abs_err / denom : 0.0;
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (abs_err <= abs_floor) continue;
    if (rel_err > report.max_rel_error) {
      report.max_rel_error = rel_err;
      report.worst_index = i;
    }
  }
  report.passed = report.max_rel_error <= tol_rel;
  return report;
}

}  // namespace copt
