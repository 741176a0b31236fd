#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "mddt/common.hpp"

namespace mddt::testing {

struct GradCheck {
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  int probes = 0;
};

// Central differences with step h on randomly chosen coordinates. The relative
// error uses max(|analytic|, |numeric|, floor) as denominator so that exactly
// zero partials compare by absolute error.
inline GradCheck check_gradient(const std::vector<double>& theta,
                                const std::vector<double>& analytic,
                                const std::function<double(const std::vector<double>&)>& f,
                                int probes, std::uint64_t seed, double h = 1e-5,
                                double floor = 1e-7) {
  GradCheck out;
  std::vector<double> x = theta;
  for (int k = 0; k < probes; ++k) {
    const auto i = static_cast<std::size_t>(derive_seed(seed, static_cast<std::uint64_t>(k)) %
                                            theta.size());
    x[i] = theta[i] + h;
    const double up = f(x);
    x[i] = theta[i] - h;
    const double down = f(x);
    x[i] = theta[i];
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(numeric - analytic[i]);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), floor});
    out.max_abs_error = std::max(out.max_abs_error, err);
    out.max_relative_error = std::max(out.max_relative_error, err / denom);
    ++out.probes;
  }
  return out;
}

}  // namespace mddt::testing
