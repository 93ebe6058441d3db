#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "mmunet/tensor.hpp"

namespace mmunet::test {

inline std::vector<Real> random_values(std::size_t n, std::uint64_t seed, Real lo = -1, Real hi = 1) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<Real> dist(lo, hi);
  std::vector<Real> v(n);
  for (auto& x : v) x = dist(eng);
  return v;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, Real lo = -1, Real hi = 1, bool grad = false) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), random_values(n, seed, lo, hi), grad);
}

inline Real max_abs_diff(std::span<const Real> a, std::span<const Real> b) {
  Real worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? worst : Real(1e300);
}

}  // namespace mmunet::test
