#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace polarloc {

/// Unit-norm descriptor of one scan.
struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
  bool operator==(const EmbeddingVector&) const = default;
};

/// Sum of squared differences, accumulated in index order. Every component
/// that compares embeddings goes through this so that distances are
/// bitwise-comparable between the index and brute-force scans.
inline double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double distance(std::span<const double> a, std::span<const double> b) noexcept {
  return std::sqrt(squared_distance(a, b));
}

inline double distance(const EmbeddingVector& a, const EmbeddingVector& b) noexcept {
  return distance(a.values, b.values);
}

}  // namespace polarloc
