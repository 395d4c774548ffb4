// Small utilities shared by the unit tests and the acceptance driver.
#pragma once

#include "dalr/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace testing_util {

using dalr::Matrix;
using dalr::Rng;
using dalr::Vector;

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                            double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(lo, hi);
  return m;
}

/// At most three hidden layers and at most 50 parameters.
inline dalr::nn::NetworkSpec random_small_spec(Rng& rng) {
  for (;;) {
    dalr::nn::NetworkSpec spec;
    spec.layer_widths.push_back(1 + rng.index(3));
    const std::size_t depth = rng.index(4);
    for (std::size_t i = 0; i < depth; ++i) spec.layer_widths.push_back(1 + rng.index(4));
    spec.layer_widths.push_back(1 + rng.index(2));
    if (spec.parameter_count() <= 50) return spec;
  }
}

/// Nonzero biases keep ReLU pre-activations away from the kink at 0, where
/// finite differences and the analytic gradient legitimately disagree.
inline dalr::nn::Parameters with_random_biases(dalr::nn::Parameters p, Rng& rng) {
  for (auto& b : p.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.uniform(-0.5, 0.5);
  return p;
}

/// Central differences (h = 1e-5) of a scalar function of the parameters,
/// in flat-view order.
inline Vector finite_difference(const dalr::nn::NetworkSpec& spec,
                                const dalr::nn::Parameters& p,
                                const std::function<double(const dalr::nn::Parameters&)>& f,
                                double h = 1e-5) {
  const Vector flat = p.flatten();
  Vector g(flat.size());
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    Vector up = flat, down = flat;
    up[i] += h;
    down[i] -= h;
    g[i] = (f(dalr::nn::Parameters::unflatten(spec, up)) -
            f(dalr::nn::Parameters::unflatten(spec, down))) /
           (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps exactly-zero
/// components (dead units) from dividing by zero.
inline double max_relative_error(const Vector& a, const Vector& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace testing_util
