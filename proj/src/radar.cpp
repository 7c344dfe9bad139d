#include "polarloc/radar.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "polarloc/binio.hpp"
#include "polarloc/error.hpp"

namespace polarloc::radar {

namespace {
// Refuse headers that would allocate more than 2^28 samples (1 GiB of f32).
constexpr std::uint64_t kMaxSamples = std::uint64_t{1} << 28;
}  // namespace

PolarScan::PolarScan(std::size_t azimuths, std::size_t bins, double range_res,
                     std::int64_t timestamp)
    : azimuth_count(azimuths),
      bin_count(bins),
      range_resolution(range_res),
      azimuth_resolution(azimuths ? 360.0 / static_cast<double>(azimuths) : 0.0),
      timestamp_ns(timestamp),
      power(azimuths * bins, 0.0f) {}

void validate(const PolarScan& scan) {
  if (scan.azimuth_count == 0 || scan.bin_count == 0) throw ConfigError("scan has a zero-sized axis");
  if (scan.power.size() != scan.azimuth_count * scan.bin_count) {
    throw ConfigError("scan power grid does not match its dimensions");
  }
  if (std::abs(static_cast<double>(scan.azimuth_count) * scan.azimuth_resolution - 360.0) > 1e-6) {
    throw ConfigError("azimuth_count * azimuth_resolution must cover 360 degrees");
  }
  if (!(scan.range_resolution > 0.0)) throw ConfigError("range resolution must be positive");
  for (float p : scan.power) {
    if (!(p >= 0.0f && p <= 1.0f)) throw ConfigError("scan power outside [0, 1]");
  }
}

NetworkInput preprocess(const PolarScan& scan, std::size_t crop_to, std::size_t width_factor) {
  if (width_factor == 0) throw ConfigError("width_factor must be >= 1");
  if (crop_to == 0 || crop_to > scan.bin_count) {
    throw ConfigError("crop_to must be in [1, bin_count]");
  }
  if (crop_to % width_factor != 0) {
    throw ConfigError("crop_to (" + std::to_string(crop_to) + ") is not divisible by width_factor (" +
                      std::to_string(width_factor) + ")");
  }
  const std::size_t out_r = crop_to / width_factor;
  NetworkInput in{FeatureMap(scan.azimuth_count, out_r, 1)};
  const double inv = 1.0 / static_cast<double>(width_factor);
  for (std::size_t a = 0; a < scan.azimuth_count; ++a) {
    const float* row = &scan.power[a * scan.bin_count];
    for (std::size_t r = 0; r < out_r; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < width_factor; ++k) s += row[r * width_factor + k];
      in.data(a, r, 0) = s * inv;
    }
  }
  return in;
}

PolarScan roll_azimuth(const PolarScan& scan, std::ptrdiff_t shift) {
  PolarScan out = scan;
  if (scan.azimuth_count == 0) return out;
  const std::size_t B = scan.bin_count;
  for (std::size_t a = 0; a < scan.azimuth_count; ++a) {
    const std::size_t src = wrap_index(static_cast<std::ptrdiff_t>(a) - shift, scan.azimuth_count);
    std::copy_n(scan.power.begin() + static_cast<std::ptrdiff_t>(src * B), B,
                out.power.begin() + static_cast<std::ptrdiff_t>(a * B));
  }
  return out;
}

void save_scan(const PolarScan& scan, std::ostream& sink) {
  if (scan.power.size() != scan.azimuth_count * scan.bin_count) {
    throw ConfigError("scan power grid does not match its dimensions");
  }
  if (scan.azimuth_count > std::numeric_limits<std::uint32_t>::max() ||
      scan.bin_count > std::numeric_limits<std::uint32_t>::max()) {
    throw ConfigError("scan dimensions exceed the PSCN u32 header fields");
  }
  binio::Writer w(sink);
  w.magic("PSCN");
  w.put<std::uint32_t>(kScanFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(scan.azimuth_count));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(scan.bin_count));
  w.put<double>(scan.range_resolution);
  w.put<double>(scan.azimuth_resolution);
  w.put<std::int64_t>(scan.timestamp_ns);
  w.put_array(scan.power.data(), scan.power.size());
  w.finish("PSCN scan");
}

PolarScan load_scan(std::istream& source) {
  binio::Reader r(source);
  r.expect_magic("PSCN", "PSCN");
  const std::size_t version_at = r.offset();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kScanFormatVersion) {
    throw FormatError("unsupported PSCN version " + std::to_string(version), version_at);
  }
  const std::size_t dims_at = r.offset();
  const auto A = r.get<std::uint32_t>("azimuth count");
  const auto B = r.get<std::uint32_t>("bin count");
  if (A == 0 || B == 0) throw FormatError("PSCN header has a zero dimension", dims_at);
  if (static_cast<std::uint64_t>(A) * B > kMaxSamples) {
    throw FormatError("PSCN dimensions overflow the sample limit", dims_at);
  }
  PolarScan scan;
  scan.azimuth_count = A;
  scan.bin_count = B;
  scan.range_resolution = r.get<double>("range resolution");
  scan.azimuth_resolution = r.get<double>("azimuth resolution");
  scan.timestamp_ns = r.get<std::int64_t>("timestamp");
  scan.power.resize(static_cast<std::size_t>(A) * B);
  r.get_array(scan.power.data(), scan.power.size(), "power payload");
  return scan;
}

void save_scan(const PolarScan& scan, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  save_scan(scan, os);
}

PolarScan load_scan(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return load_scan(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_index(const std::vector<IndexEntry>& entries, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "filename,pose_id\n";
  for (const auto& e : entries) os << e.filename << ',' << e.pose_id << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

std::vector<IndexEntry> read_index(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<IndexEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("filename", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(path.string() + ": expected filename,pose_id", line_no);
    IndexEntry e;
    e.filename = line.substr(0, comma);
    try {
      e.pose_id = std::stoull(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": bad pose_id", line_no);
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace polarloc::radar
