#include "polarloc/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <string>

#include "polarloc/error.hpp"
#include "polarloc/text.hpp"

namespace polarloc::sim {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kYawQuantum = 1.0 / 1048576.0;  // 2^-20 azimuth steps
constexpr double kBeamSpread = 1.5;              // beamwidths
constexpr double kAttenuationScale = 50.0;       // metres

}  // namespace

double wrap_angle(double radians) noexcept {
  double r = std::fmod(radians, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  if (r > kPi) r -= 2.0 * kPi;
  return r;
}

double planar_distance(const Pose2& a, const Pose2& b) noexcept {
  return std::hypot(a.x - b.x, a.y - b.y);
}

void validate(const World& world) {
  for (const auto& l : world.landmarks) {
    if (!(l.reflectivity > 0.0 && l.reflectivity <= 1.0)) {
      throw ConfigError("landmark reflectivity must lie in (0, 1]");
    }
    if (!(l.radius > 0.0)) throw ConfigError("landmark radius must be positive");
    if (!std::isfinite(l.x) || !std::isfinite(l.y)) throw ConfigError("landmark position not finite");
  }
  if (world.noise_floor < 0.0 || world.speckle_sigma < 0.0) {
    throw ConfigError("noise parameters must be non-negative");
  }
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) noexcept {
  // splitmix64 finaliser over the combined words
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

radar::PolarScan render_scan(const World& world, const Pose2& pose, const SensorParams& sensor,
                             std::uint64_t noise_seed, std::int64_t timestamp_ns) {
  if (sensor.azimuth_count == 0 || sensor.bin_count == 0 || !(sensor.range_resolution > 0.0)) {
    throw ConfigError("invalid sensor parameters");
  }
  validate(world);
  const std::size_t A = sensor.azimuth_count;
  const std::size_t B = sensor.bin_count;
  const double step = 2.0 * kPi / static_cast<double>(A);
  const double half_a = static_cast<double>(A) / 2.0;

  // Split yaw into whole azimuth steps and a quantised fraction.
  const double t = pose.yaw / step;
  double whole = std::floor(t);
  double frac = std::round((t - whole) / kYawQuantum) * kYawQuantum;
  if (frac >= 1.0) {
    whole += 1.0;
    frac = 0.0;
  }
  const std::size_t first_row = wrap_index(static_cast<std::ptrdiff_t>(whole), A);

  // Accumulate in a world-aligned grid: row j looks along world angle (j + frac) * step.
  std::vector<double> grid(A * B, 0.0);
  for (const auto& lm : world.landmarks) {
    const double dx = lm.x - pose.x;
    const double dy = lm.y - pose.y;
    const double d = std::hypot(dx, dy);
    const auto centre = static_cast<std::ptrdiff_t>(std::llround(d / sensor.range_resolution));
    if (centre >= static_cast<std::ptrdiff_t>(B)) continue;
    const double bearing = std::atan2(dy, dx) / step - frac;
    const double half_width = std::atan2(lm.radius, std::max(d, 1e-9)) / step;
    const double amplitude = lm.reflectivity / (1.0 + d / kAttenuationScale);
    const double sigma_bins = std::max(1.0, 0.5 * lm.radius / sensor.range_resolution);
    const auto reach = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma_bins));

    for (std::size_t j = 0; j < A; ++j) {
      double offset = std::fmod(bearing - static_cast<double>(j), static_cast<double>(A));
      if (offset > half_a) offset -= static_cast<double>(A);
      if (offset <= -half_a) offset += static_cast<double>(A);
      const double eff = std::max(0.0, std::abs(offset) - half_width);
      if (eff >= kBeamSpread) continue;
      const double taper = std::cos(0.5 * kPi * eff / kBeamSpread);
      const double peak = amplitude * taper;
      double* row = &grid[j * B];
      for (std::ptrdiff_t b = std::max<std::ptrdiff_t>(0, centre - reach);
           b <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(B) - 1, centre + reach); ++b) {
        const double u = static_cast<double>(b - centre) / sigma_bins;
        row[b] += peak * std::exp(-0.5 * u * u);
      }
    }
  }

  radar::PolarScan scan(A, B, sensor.range_resolution, timestamp_ns);
  const bool noisy = world.noise_floor > 0.0 || world.speckle_sigma > 0.0;
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double s = world.speckle_sigma;
  for (std::size_t a = 0; a < A; ++a) {
    const double* src = &grid[((first_row + a) % A) * B];
    for (std::size_t b = 0; b < B; ++b) {
      double p = src[b];
      if (noisy) {
        p = p * std::exp(s * normal(rng) - 0.5 * s * s) + world.noise_floor * uniform(rng);
      }
      scan.at(a, b) = static_cast<float>(std::clamp(p, 0.0, 1.0));
    }
  }
  return scan;
}

std::vector<radar::PolarScan> render_trajectory(const World& world, const Trajectory& trajectory,
                                                const SensorParams& sensor, std::uint64_t seed) {
  std::vector<radar::PolarScan> scans;
  scans.reserve(trajectory.size());
  for (const auto& tp : trajectory.poses) {
    scans.push_back(render_scan(world, tp.pose, sensor, derive_seed(world.rng_seed ^ seed, tp.id),
                                tp.timestamp_ns));
  }
  return scans;
}

Trajectory generate_trajectory(const std::vector<Pose2>& waypoints, double spacing,
                               double speed_mps, std::uint64_t first_id, std::int64_t start_ns) {
  if (waypoints.size() < 2) throw ConfigError("generate_trajectory needs at least 2 waypoints");
  if (!(spacing > 0.0)) throw ConfigError("trajectory spacing must be positive");
  if (!(speed_mps > 0.0)) throw ConfigError("trajectory speed must be positive");

  std::vector<double> seg_start{0.0};
  std::vector<double> seg_len;
  for (std::size_t i = 0; i + 1 < waypoints.size(); ++i) {
    const double len = planar_distance(waypoints[i], waypoints[i + 1]);
    if (!(len > 0.0)) {
      throw ConfigError("degenerate segment: waypoints " + std::to_string(i) + " and " +
                        std::to_string(i + 1) + " coincide");
    }
    seg_len.push_back(len);
    seg_start.push_back(seg_start.back() + len);
  }
  const double total = seg_start.back();

  std::vector<double> stations;
  for (std::size_t k = 0;; ++k) {
    const double s = static_cast<double>(k) * spacing;
    if (total - s < 1e-6 * spacing) break;
    stations.push_back(s);
  }
  stations.push_back(total);

  Trajectory traj;
  std::size_t seg = 0;
  for (std::size_t k = 0; k < stations.size(); ++k) {
    const double s = stations[k];
    while (seg + 1 < seg_len.size() && seg_start[seg + 1] <= s) ++seg;
    const Pose2& p0 = waypoints[seg];
    const Pose2& p1 = waypoints[seg + 1];
    const double u = std::clamp((s - seg_start[seg]) / seg_len[seg], 0.0, 1.0);
    Pose2 pose{p0.x + u * (p1.x - p0.x), p0.y + u * (p1.y - p0.y),
               wrap_angle(std::atan2(p1.y - p0.y, p1.x - p0.x))};
    std::int64_t ts = start_ns + static_cast<std::int64_t>(std::llround(s / speed_mps * 1e9));
    if (!traj.poses.empty() && ts <= traj.poses.back().timestamp_ns) ts = traj.poses.back().timestamp_ns + 1;
    traj.poses.push_back({first_id + k, pose, ts});
  }
  // Odometry between consecutive poses, as it is recovered after a reload.
  recompute_distances(traj);
  return traj;
}

void recompute_distances(Trajectory& trajectory) {
  trajectory.cumulative_distance.assign(trajectory.size(), 0.0);
  for (std::size_t i = 1; i < trajectory.size(); ++i) {
    trajectory.cumulative_distance[i] =
        trajectory.cumulative_distance[i - 1] +
        planar_distance(trajectory.poses[i - 1].pose, trajectory.poses[i].pose);
  }
}

void save_world(const World& world, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "# polarloc world\n";
  os << "noise_floor " << text::format_double(world.noise_floor) << '\n';
  os << "speckle_sigma " << text::format_double(world.speckle_sigma) << '\n';
  os << "rng_seed " << world.rng_seed << '\n';
  os << "landmarks\n";
  for (const auto& l : world.landmarks) {
    os << text::format_double(l.x) << ' ' << text::format_double(l.y) << ' '
       << text::format_double(l.reflectivity) << ' ' << text::format_double(l.radius) << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

World load_world(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  World world;
  bool in_table = false;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw FormatError(path.string() + ": " + msg, line_no);
  };
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto fields = text::split_whitespace(line);
    if (fields.empty()) continue;
    if (!in_table) {
      if (fields[0] == "landmarks") {
        in_table = true;
        continue;
      }
      if (fields.size() != 2) fail("expected 'key value'");
      bool ok = false;
      if (fields[0] == "noise_floor") ok = text::parse_number(fields[1], world.noise_floor);
      else if (fields[0] == "speckle_sigma") ok = text::parse_number(fields[1], world.speckle_sigma);
      else if (fields[0] == "rng_seed") ok = text::parse_number(fields[1], world.rng_seed);
      else fail("unknown key '" + std::string(fields[0]) + "'");
      if (!ok) fail("bad value for '" + std::string(fields[0]) + "'");
      continue;
    }
    if (fields.size() < 4) fail("landmark row needs x y reflectivity radius");
    Landmark l;
    if (!text::parse_number(fields[0], l.x) || !text::parse_number(fields[1], l.y) ||
        !text::parse_number(fields[2], l.reflectivity) || !text::parse_number(fields[3], l.radius)) {
      fail("bad landmark row");
    }
    world.landmarks.push_back(l);
  }
  try {
    validate(world);
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what(), line_no);
  }
  return world;
}

void save_trajectory(const Trajectory& trajectory, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "pose_id,timestamp_ns,x,y,yaw\n";
  for (const auto& tp : trajectory.poses) {
    os << tp.id << ',' << tp.timestamp_ns << ',' << text::format_double(tp.pose.x) << ','
       << text::format_double(tp.pose.y) << ',' << text::format_double(tp.pose.yaw) << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  Trajectory traj;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (line_no == 1 && line.rfind("pose_id", 0) == 0) continue;
    const auto f = text::split(line, ',');
    TimedPose tp;
    if (f.size() != 5 || !text::parse_number(f[0], tp.id) ||
        !text::parse_number(f[1], tp.timestamp_ns) || !text::parse_number(f[2], tp.pose.x) ||
        !text::parse_number(f[3], tp.pose.y) || !text::parse_number(f[4], tp.pose.yaw)) {
      throw FormatError(path.string() + ": expected pose_id,timestamp_ns,x,y,yaw", line_no);
    }
    if (!traj.poses.empty() && tp.timestamp_ns <= traj.poses.back().timestamp_ns) {
      throw FormatError(path.string() + ": timestamps must be strictly increasing", line_no);
    }
    traj.poses.push_back(tp);
  }
  recompute_distances(traj);
  return traj;
}

World make_desk_world(const DeskWorldConfig& config, std::uint64_t seed) {
  World world;
  world.noise_floor = config.noise_floor;
  world.speckle_sigma = config.speckle_sigma;
  world.rng_seed = seed;
  std::mt19937_64 rng(derive_seed(seed, 0xd35c));
  std::uniform_real_distribution<double> angle(-kPi, kPi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double r_in = std::max(0.0, config.loop_radius - config.landmark_band);
  const double r_out = config.loop_radius + config.landmark_band;
  while (world.landmarks.size() < config.landmark_count) {
    // Uniform over the annulus area.
    const double rad = std::sqrt(r_in * r_in + unit(rng) * (r_out * r_out - r_in * r_in));
    const double th = angle(rng);
    // Keep a clear corridor around the driven path.
    if (std::abs(rad - config.loop_radius) < 4.0) continue;
    Landmark l;
    l.x = rad * std::cos(th);
    l.y = rad * std::sin(th);
    l.reflectivity = 0.25 + 0.75 * unit(rng);
    l.radius = 0.5 + 2.5 * unit(rng) * unit(rng);
    world.landmarks.push_back(l);
  }
  return world;
}

Trajectory make_loop_traversal(const DeskWorldConfig& config, double lateral_offset,
                               double start_fraction, double spacing, std::uint64_t first_id) {
  if (config.loop_vertices < 3) throw ConfigError("loop needs at least 3 vertices");
  const double r = config.loop_radius + lateral_offset;
  if (!(r > 0.0)) throw ConfigError("lateral offset collapses the loop");
  const std::size_t V = config.loop_vertices;
  auto vertex = [&](std::size_t i) {
    const double th = 2.0 * kPi * static_cast<double>(i % V) / static_cast<double>(V);
    return Pose2{r * std::cos(th), r * std::sin(th), 0.0};
  };
  const double f = std::clamp(start_fraction, 0.0, 0.999);
  const Pose2 v0 = vertex(0);
  const Pose2 v1 = vertex(1);
  const Pose2 start{v0.x + f * (v1.x - v0.x), v0.y + f * (v1.y - v0.y), 0.0};
  std::vector<Pose2> waypoints{start};
  for (std::size_t i = 1; i <= V; ++i) waypoints.push_back(vertex(i));
  waypoints.push_back(start);
  if (f == 0.0) waypoints.pop_back();  // start coincides with vertex V
  return generate_trajectory(waypoints, spacing, 10.0, first_id);
}

}  // namespace polarloc::sim
