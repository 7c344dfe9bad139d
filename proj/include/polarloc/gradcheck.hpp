#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "polarloc/feature_map.hpp"

namespace polarloc::numerics {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string op_name;
  std::size_t probe_count = 0;
};

/// A FeatureMap -> FeatureMap op with its vector-Jacobian product.
struct DifferentiableOp {
  std::string name;
  std::function<FeatureMap(const FeatureMap&)> forward;
  /// (input, grad_output) -> grad_input
  std::function<FeatureMap(const FeatureMap&, const FeatureMap&)> backward;
};

/// Relative error used by every gradient check:
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
double gradient_relative_error(double analytic, double numeric, double floor = 1e-6) noexcept;

/// Compares `analytic` (the gradient of `f` at `x`) with central differences
/// at `probe_count` coordinates drawn uniformly with `seed`.
GradCheckReport check_gradient(std::string name,
                               const std::function<double(std::span<const double>)>& f,
                               std::span<const double> x, std::span<const double> analytic,
                               double epsilon, std::size_t probe_count, std::uint64_t seed);

/// Checks op.backward against finite differences of the scalar
/// L(x) = sum_i w_i * op.forward(x)_i for fixed random weights w.
GradCheckReport finite_diff_check(const DifferentiableOp& op, const FeatureMap& probe,
                                  double epsilon, std::size_t probe_count = 100,
                                  std::uint64_t seed = 7);

}  // namespace polarloc::numerics
