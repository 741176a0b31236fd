#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace mddt::stats {

/// Midranks (1-based, ties averaged) of `values` in their original order.
std::vector<double> midranks(std::span<const double> values);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool degenerate = false;  // no variation; p reported as 1
};

/// Two-sided Wilcoxon rank-sum (Mann-Whitney) test, normal approximation
/// with tie correction.
TestResult rank_sum_test(std::span<const double> a, std::span<const double> b);

/// Pearson chi-square test of independence on a rows x cols table of counts.
/// Empty rows and columns are dropped before the degrees of freedom are
/// counted.
TestResult chi_square_test(const std::vector<std::vector<double>>& table);

/// Two-sided standard normal tail probability P(|Z| >= |z|).
double two_sided_normal_p(double z);

}  // namespace mddt::stats
