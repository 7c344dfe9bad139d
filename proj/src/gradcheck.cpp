#include "polarloc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "polarloc/error.hpp"

namespace polarloc::numerics {

double gradient_relative_error(double analytic, double numeric, double floor) noexcept {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport check_gradient(std::string name,
                               const std::function<double(std::span<const double>)>& f,
                               std::span<const double> x, std::span<const double> analytic,
                               double epsilon, std::size_t probe_count, std::uint64_t seed) {
  if (x.size() != analytic.size()) throw ConfigError("check_gradient: gradient size mismatch");
  if (x.empty()) throw ConfigError("check_gradient: empty parameter vector");
  GradCheckReport report{0.0, std::move(name), probe_count};
  std::vector<double> work(x.begin(), x.end());
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  for (std::size_t p = 0; p < probe_count; ++p) {
    const std::size_t i = pick(rng);
    const double orig = work[i];
    work[i] = orig + epsilon;
    const double up = f(work);
    work[i] = orig - epsilon;
    const double down = f(work);
    work[i] = orig;
    const double numeric = (up - down) / (2.0 * epsilon);
    report.max_rel_error =
        std::max(report.max_rel_error, gradient_relative_error(analytic[i], numeric));
  }
  return report;
}

GradCheckReport finite_diff_check(const DifferentiableOp& op, const FeatureMap& probe,
                                  double epsilon, std::size_t probe_count, std::uint64_t seed) {
  const FeatureMap out = op.forward(probe);
  FeatureMap weights(out.azimuth_len(), out.range_len(), out.channels());
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (double& w : weights.values()) w = unit(rng);

  const FeatureMap grad = op.backward(probe, weights);
  auto objective = [&](std::span<const double> x) {
    FeatureMap in(probe.azimuth_len(), probe.range_len(), probe.channels());
    std::copy(x.begin(), x.end(), in.values().begin());
    const FeatureMap y = op.forward(in);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += weights.values()[i] * y.values()[i];
    return s;
  };
  return check_gradient(op.name, objective, probe.values(), grad.values(), epsilon, probe_count,
                        seed);
}

}  // namespace polarloc::numerics
