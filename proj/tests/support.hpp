#pragma once

// Shared helpers for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>

#include "polarloc/feature_map.hpp"

namespace polarloc::testing {

inline FeatureMap random_map(std::size_t a, std::size_t r, std::size_t c, std::uint64_t seed,
                             double lo = -1.0, double hi = 1.0) {
  FeatureMap m(a, r, c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : m.values()) v = u(rng);
  return m;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace polarloc::testing
