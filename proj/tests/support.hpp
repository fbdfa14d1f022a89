#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "xrhead/tensor.hpp"

namespace testing {

inline xrhead::Tensor random_tensor(xrhead::Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                                    bool requires_grad = false) {
  std::normal_distribution<double> d(0.0, stddev);
  std::vector<double> v(xrhead::shape_numel(shape));
  for (double& x : v) x = d(rng);
  return xrhead::Tensor(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::vector<double> to_vec(const xrhead::Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace testing
