#include "mddt/stats.hpp"

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <numeric>

namespace mddt::stats {

std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] < values[b];
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double two_sided_normal_p(double z) {
  if (!std::isfinite(z)) return 0.0;
  return std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
}

TestResult rank_sum_test(std::span<const double> a, std::span<const double> b) {
  TestResult result;
  const double n1 = static_cast<double>(a.size());
  const double n2 = static_cast<double>(b.size());
  if (a.empty() || b.empty()) {
    result.degenerate = true;
    return result;
  }
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = midranks(pooled);
  double rank_sum_a = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) rank_sum_a += ranks[i];
  const double u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;

  // tie correction term sum(t^3 - t)
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double ties = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    i = j;
  }
  const double n = n1 + n2;
  const double variance = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
  result.statistic = u;
  if (!(variance > 0.0)) {
    result.degenerate = true;
    result.p_value = 1.0;
    return result;
  }
  const double z = (u - n1 * n2 / 2.0) / std::sqrt(variance);
  result.p_value = two_sided_normal_p(z);
  return result;
}

TestResult chi_square_test(const std::vector<std::vector<double>>& table) {
  TestResult result;
  std::vector<double> row_totals;
  std::vector<double> col_totals;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
  const std::size_t ncols = table.empty() ? 0 : table.front().size();
  for (std::size_t r = 0; r < table.size(); ++r) {
    const double total = std::accumulate(table[r].begin(), table[r].end(), 0.0);
    if (total > 0.0) {
      rows.push_back(r);
      row_totals.push_back(total);
    }
  }
  for (std::size_t c = 0; c < ncols; ++c) {
    double total = 0.0;
    for (const auto& row : table) total += row[c];
    if (total > 0.0) {
      cols.push_back(c);
      col_totals.push_back(total);
    }
  }
  if (rows.size() < 2 || cols.size() < 2) {
    result.degenerate = true;
    return result;
  }
  const double grand = std::accumulate(row_totals.begin(), row_totals.end(), 0.0);
  double chi2 = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const double expected = row_totals[i] * col_totals[j] / grand;
      const double diff = table[rows[i]][cols[j]] - expected;
      chi2 += diff * diff / expected;
    }
  }
  const double df = static_cast<double>((rows.size() - 1) * (cols.size() - 1));
  result.statistic = chi2;
  result.p_value = chi2 > 0.0 ? boost::math::gamma_q(df / 2.0, chi2 / 2.0) : 1.0;
  return result;
}

}  // namespace mddt::stats
