// Run summaries: AUC of the error curve, batch diversity, normalization
// against random sampling, and the best-pool-ratio histogram.
#pragma once

#include "dalr/core.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace dalr::metrics {

/// Composite trapezoidal rule over (x, value) points with strictly
/// increasing x.
inline double auc_trapezoid(const std::vector<std::pair<double, double>>& series) {
  if (series.size() < 2) throw InvalidInput("AUC needs at least two points");
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < series.size(); ++i) {
    const double dx = series[i + 1].first - series[i].first;
    if (!(dx > 0.0)) throw InvalidInput("AUC steps must be strictly increasing");
    area += dx * (series[i].second + series[i + 1].second) / 2.0;
  }
  return area;
}

/// AUC of values observed at steps 0, 1, 2, ...
inline double auc_by_step(const std::vector<double>& values) {
  std::vector<std::pair<double, double>> s;
  for (std::size_t i = 0; i < values.size(); ++i) s.emplace_back(static_cast<double>(i), values[i]);
  return auc_trapezoid(s);
}

/// Mean over batch members of the distance to their nearest other member.
inline double batch_div(const Matrix& batch) {
  const Eigen::Index n = batch.cols();
  if (n < 2) throw InvalidInput("batch diversity needs at least two points");
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) best = std::min(best, (batch.col(i) - batch.col(j)).norm());
    total += best;
  }
  return total / static_cast<double>(n);
}

struct CurveSummary {
  double auc_mse = 0.0;
  double div = 0.0;
};

inline CurveSummary summarize(const std::vector<double>& test_mse,
                              const std::vector<double>& batch_divs) {
  CurveSummary s;
  s.auc_mse = auc_by_step(test_mse);
  double d = 0.0;
  for (double v : batch_divs) d += v;
  s.div = batch_divs.empty() ? 0.0 : d / static_cast<double>(batch_divs.size());
  return s;
}

struct NormalizedSummary {
  double nauc_mse = 0.0;
  double ndiv = 0.0;
};

/// Divides each summary by the mean of the matched random-sampling runs.
inline std::vector<NormalizedSummary> normalize(const std::vector<CurveSummary>& summaries,
                                                const std::vector<CurveSummary>& random) {
  if (random.empty()) throw InvalidInput("normalization needs at least one random run");
  double auc = 0.0, div = 0.0;
  for (const auto& r : random) auc += r.auc_mse, div += r.div;
  auc /= static_cast<double>(random.size());
  div /= static_cast<double>(random.size());
  std::vector<NormalizedSummary> out;
  for (const auto& s : summaries)
    out.push_back({s.auc_mse / auc, div > 0.0 ? s.div / div : 0.0});
  return out;
}

/// Mean nAUC keyed by (strategy, problem, gamma).
using GammaTable = std::map<std::pair<std::string, std::string>, std::map<std::size_t, double>>;

/// For every strategy, how many problems attain their minimal mean nAUC at
/// each gamma. Ties go to the smallest gamma.
inline std::map<std::string, std::map<std::size_t, std::size_t>> best_gamma_histogram(
    const GammaTable& table) {
  std::map<std::string, std::map<std::size_t, std::size_t>> hist;
  for (const auto& [key, by_gamma] : table) {
    if (by_gamma.empty()) continue;
    auto& h = hist[key.first];
    for (const auto& [g, _] : by_gamma) h.try_emplace(g, 0);
    std::size_t best_g = by_gamma.begin()->first;
    double best_v = by_gamma.begin()->second;
    for (const auto& [g, v] : by_gamma)
      if (v < best_v) best_v = v, best_g = g;
    ++h[best_g];
  }
  return hist;
}

/// The most frequent best gamma of a histogram (smallest gamma on ties).
inline std::size_t prior_gamma(const std::map<std::size_t, std::size_t>& histogram) {
  std::size_t best_g = 0, best_count = 0;
  bool first = true;
  for (const auto& [g, c] : histogram)
    if (first || c > best_count) best_g = g, best_count = c, first = false;
  return best_g;
}

}  // namespace dalr::metrics
