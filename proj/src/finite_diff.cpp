#include "nsrf/finite_diff.hpp"

#include <cmath>

#include "nsrf/check.hpp"

namespace nsrf::ad {

FdReport finite_diff_check(const ScalarFn& f, std::vector<std::vector<double>> params,
                           const std::vector<std::vector<double>>& analytic, double h) {
  NSRF_CHECK(params.size() == analytic.size(), "finite_diff_check: {} parameter tensors but {} gradient tensors",
             params.size(), analytic.size());
  NSRF_CHECK(h > 0.0, "finite_diff_check: step must be positive, got {}", h);
  FdReport report;
  for (size_t t = 0; t < params.size(); ++t) {
    NSRF_CHECK(params[t].size() == analytic[t].size(),
               "finite_diff_check: tensor {} has {} values but {} gradients", t, params[t].size(),
               analytic[t].size());
    for (size_t i = 0; i < params[t].size(); ++i) {
      const double saved = params[t][i];
      params[t][i] = saved + h;
      const double up = f(params);
      params[t][i] = saved - h;
      const double down = f(params);
      params[t][i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[t][i] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > report.max_err || report.worst_index < 0) {
        report.max_err = err;
        report.worst_tensor = t;
        report.worst_index = static_cast<int64_t>(i);
        report.worst_analytic = analytic[t][i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace nsrf::ad
