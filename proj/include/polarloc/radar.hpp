#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "polarloc/feature_map.hpp"

namespace polarloc::radar {

/// One full sensor rotation: power[a * bin_count + b] for azimuth a and range
/// bin b, values in [0, 1].
struct PolarScan {
  std::size_t azimuth_count = 0;
  std::size_t bin_count = 0;
  double range_resolution = 0.0;    // metres per bin
  double azimuth_resolution = 0.0;  // degrees per azimuth
  std::int64_t timestamp_ns = 0;
  std::vector<float> power;

  PolarScan() = default;
  PolarScan(std::size_t azimuths, std::size_t bins, double range_res, std::int64_t timestamp = 0);

  float& at(std::size_t a, std::size_t b) { return power[a * bin_count + b]; }
  float at(std::size_t a, std::size_t b) const { return power[a * bin_count + b]; }

  double max_range() const noexcept { return range_resolution * static_cast<double>(bin_count); }

  bool operator==(const PolarScan&) const = default;
};

/// Throws ConfigError when the scan breaks its invariants (power range,
/// storage size, full-circle azimuth coverage).
void validate(const PolarScan& scan);

/// Single-channel network input, azimuth_len == source azimuth_count.
struct NetworkInput {
  FeatureMap data;
};

/// Keeps bins [0, crop_to) and mean-pools each run of width_factor bins.
NetworkInput preprocess(const PolarScan& scan, std::size_t crop_to, std::size_t width_factor);

/// Row a of the result is row (a - shift) mod azimuth_count of `scan`.
PolarScan roll_azimuth(const PolarScan& scan, std::ptrdiff_t shift);

// PSCN binary format, little-endian:
//   "PSCN" | version u32 | A u32 | B u32 | range_res f64 | azimuth_res f64 |
//   timestamp_ns i64 | A*B f32 (azimuth-major)
inline constexpr std::uint32_t kScanFormatVersion = 1;

void save_scan(const PolarScan& scan, std::ostream& sink);
PolarScan load_scan(std::istream& source);
void save_scan(const PolarScan& scan, const std::filesystem::path& path);
PolarScan load_scan(const std::filesystem::path& path);

/// One row of a dataset's index.csv.
struct IndexEntry {
  std::string filename;
  std::uint64_t pose_id = 0;
};

void write_index(const std::vector<IndexEntry>& entries, const std::filesystem::path& path);
std::vector<IndexEntry> read_index(const std::filesystem::path& path);

}  // namespace polarloc::radar
