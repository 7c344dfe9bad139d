#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace polarloc {

/// Dense activation grid indexed (azimuth, range, channel), channel fastest.
/// The azimuth axis is cyclic; every op in numerics treats it modulo
/// azimuth_len().
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t azimuth_len, std::size_t range_len, std::size_t channels,
             double fill = 0.0)
      : azimuth_len_(azimuth_len),
        range_len_(range_len),
        channels_(channels),
        data_(azimuth_len * range_len * channels, fill) {}

  std::size_t azimuth_len() const noexcept { return azimuth_len_; }
  std::size_t range_len() const noexcept { return range_len_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t offset(std::size_t a, std::size_t r, std::size_t c) const noexcept {
    return (a * range_len_ + r) * channels_ + c;
  }
  double& operator()(std::size_t a, std::size_t r, std::size_t c) noexcept {
    return data_[offset(a, r, c)];
  }
  const double& operator()(std::size_t a, std::size_t r, std::size_t c) const noexcept {
    return data_[offset(a, r, c)];
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  bool same_shape(const FeatureMap& other) const noexcept {
    return azimuth_len_ == other.azimuth_len_ && range_len_ == other.range_len_ &&
           channels_ == other.channels_;
  }

  bool operator==(const FeatureMap&) const = default;

 private:
  std::size_t azimuth_len_ = 0;
  std::size_t range_len_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

/// Row a of the result equals row (a - shift) mod azimuth_len of `map`.
FeatureMap roll_azimuth(const FeatureMap& map, std::ptrdiff_t shift);

/// True when every entry is finite.
bool all_finite(const FeatureMap& map) noexcept;

inline std::size_t wrap_index(std::ptrdiff_t i, std::size_t n) noexcept {
  const auto m = static_cast<std::ptrdiff_t>(n);
  std::ptrdiff_t r = i % m;
  return static_cast<std::size_t>(r < 0 ? r + m : r);
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) noexcept { return (a + b - 1) / b; }

}  // namespace polarloc
