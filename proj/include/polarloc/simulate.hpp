#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "polarloc/radar.hpp"

namespace polarloc::sim {

/// Planar pose; yaw in (-pi, pi], measured counter-clockwise from +x.
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  bool operator==(const Pose2&) const = default;
};

double wrap_angle(double radians) noexcept;
double planar_distance(const Pose2& a, const Pose2& b) noexcept;

struct Landmark {
  double x = 0.0;
  double y = 0.0;
  double reflectivity = 1.0;  // (0, 1]
  double radius = 1.0;        // metres, > 0

  bool operator==(const Landmark&) const = default;
};

struct World {
  std::vector<Landmark> landmarks;
  double noise_floor = 0.0;
  double speckle_sigma = 0.0;
  std::uint64_t rng_seed = 0;

  bool operator==(const World&) const = default;
};

void validate(const World& world);

struct SensorParams {
  std::size_t azimuth_count = 64;
  std::size_t bin_count = 256;
  double range_resolution = 0.25;

  double max_range() const noexcept { return range_resolution * static_cast<double>(bin_count); }
};

struct TimedPose {
  std::uint64_t id = 0;
  Pose2 pose;
  std::int64_t timestamp_ns = 0;

  bool operator==(const TimedPose&) const = default;
};

struct Trajectory {
  std::vector<TimedPose> poses;
  std::vector<double> cumulative_distance;

  std::size_t size() const noexcept { return poses.size(); }
  bool empty() const noexcept { return poses.empty(); }
};

/// Renders one scan. Ray a points along world angle yaw + a * 2pi/A. The yaw
/// is split into a whole number of azimuth steps (applied as a row rotation)
/// and a fraction quantised to 2^-20 of a step, so that with zero noise
/// render(yaw + k * step) == roll_azimuth(render(yaw), -k) bitwise.
radar::PolarScan render_scan(const World& world, const Pose2& pose, const SensorParams& sensor,
                             std::uint64_t noise_seed = 0, std::int64_t timestamp_ns = 0);

/// Per-pose seed derivation used for reproducible dataset rendering.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) noexcept;

/// Renders every pose of a trajectory with seeds derive_seed(world.rng_seed ^ seed, pose id).
std::vector<radar::PolarScan> render_trajectory(const World& world, const Trajectory& trajectory,
                                                const SensorParams& sensor, std::uint64_t seed);

/// Samples the waypoint polyline every `spacing` metres plus its end point.
/// Each pose faces along the segment it lies on (the outgoing segment at a
/// corner). Timestamps follow the arc length at `speed_mps`.
Trajectory generate_trajectory(const std::vector<Pose2>& waypoints, double spacing,
                               double speed_mps = 10.0, std::uint64_t first_id = 0,
                               std::int64_t start_ns = 0);

/// Recomputes cumulative planar distances from the pose sequence.
void recompute_distances(Trajectory& trajectory);

// World file: "key value" lines (noise_floor, speckle_sigma, rng_seed), then a
// "landmarks" line followed by rows "x y reflectivity radius". '#' starts a
// comment.
void save_world(const World& world, const std::filesystem::path& path);
World load_world(const std::filesystem::path& path);

// Trajectory CSV: pose_id,timestamp_ns,x,y,yaw
void save_trajectory(const Trajectory& trajectory, const std::filesystem::path& path);
Trajectory load_trajectory(const std::filesystem::path& path);

/// Synthetic environment used for desk-scale experiments: landmarks scattered
/// around a closed polygonal loop.
struct DeskWorldConfig {
  double loop_radius = 80.0;
  std::size_t loop_vertices = 24;
  std::size_t landmark_count = 320;
  double landmark_band = 60.0;  // landmarks within loop_radius +- band
  double noise_floor = 0.03;
  double speckle_sigma = 0.15;
};

World make_desk_world(const DeskWorldConfig& config, std::uint64_t seed);

/// One traversal of the desk loop, counter-clockwise, starting `start_fraction`
/// of the way along the first edge and laterally offset outwards by
/// `lateral_offset` metres.
Trajectory make_loop_traversal(const DeskWorldConfig& config, double lateral_offset,
                               double start_fraction, double spacing, std::uint64_t first_id);

}  // namespace polarloc::sim
