#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "cascade/tensor.hpp"

namespace cascade::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uni(rng);
  return t;
}

inline double max_rel_diff(const Tensor& a, const Tensor& b) {
  const double floor = std::max(1e-6 * a.max_abs(), 1e-300);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace cascade::testing
