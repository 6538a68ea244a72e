#pragma once

#include <cstdint>
#include <functional>
#include <vector>

namespace nsrf::ad {

// Result of comparing analytic gradients against central differences. The
// error is max over parameters of |analytic - numeric| / max(1, |numeric|).
struct FdReport {
  double max_err = 0.0;
  size_t worst_tensor = 0;
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Scalar objective evaluated at the given parameter values. The callee
// builds whatever graph it needs; only the value is observed.
using ScalarFn = std::function<double(const std::vector<std::vector<double>>&)>;

// Central-difference check of `analytic` (one vector per parameter tensor,
// aligned with `params`) against (f(x+h) - f(x-h)) / 2h per coordinate.
FdReport finite_diff_check(const ScalarFn& f, std::vector<std::vector<double>> params,
                           const std::vector<std::vector<double>>& analytic, double h = 1e-5);

}  // namespace nsrf::ad
