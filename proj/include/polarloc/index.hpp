#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "polarloc/embedding.hpp"
#include "polarloc/simulate.hpp"

namespace polarloc::index {

struct IndexedPoint {
  EmbeddingVector embedding;
  std::uint64_t place_id = 0;
};

struct Neighbor {
  std::uint64_t place_id = 0;
  double distance = 0.0;
  std::size_t insertion = 0;  // position in the build input

  bool operator==(const Neighbor&) const = default;
};

/// Exact kd-tree over embeddings. Splits at the median of the dimension with
/// the widest spread. Results are ordered by (distance, insertion order) and
/// are identical to a linear scan using polarloc::distance.
class EmbeddingIndex {
 public:
  /// Throws ConfigError on an empty set or mixed dimensions.
  static EmbeddingIndex build(std::vector<IndexedPoint> points, std::size_t leaf_size = 8);

  /// The n nearest points, ascending. Throws QueryError unless 1 <= n <= size().
  std::vector<Neighbor> knn(const EmbeddingVector& query, std::size_t n) const;

  /// Every point with distance <= radius, ascending. Throws QueryError on a
  /// negative radius.
  std::vector<Neighbor> ball(const EmbeddingVector& query, double radius) const;

  std::size_t size() const noexcept { return points_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<IndexedPoint>& points() const noexcept { return points_; }
  std::size_t depth() const noexcept;

 private:
  struct Node {
    std::size_t begin = 0, end = 0;  // range in order_ (leaves)
    std::size_t split_dim = 0;
    double split_value = 0.0;
    std::int64_t left = -1, right = -1;
  };

  std::int64_t build_node(std::size_t begin, std::size_t end, std::size_t leaf_size);
  void check_query(const EmbeddingVector& query) const;

  std::vector<IndexedPoint> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t dim_ = 0;
};

/// Linear-scan references with the same ordering contract as the index.
std::vector<Neighbor> brute_force_knn(const std::vector<IndexedPoint>& points,
                                      const EmbeddingVector& query, std::size_t n);
std::vector<Neighbor> brute_force_ball(const std::vector<IndexedPoint>& points,
                                       const EmbeddingVector& query, double radius);

// Map database, little-endian:
//   "PMAP" | version u32 | count u64 | dim u32 |
//   count x (place_id u64, x f64, y f64, yaw f64, timestamp_ns i64, dim x f64)
inline constexpr std::uint32_t kMapFormatVersion = 1;

struct MapRecord {
  std::uint64_t place_id = 0;
  sim::Pose2 pose;
  std::int64_t timestamp_ns = 0;
  EmbeddingVector embedding;

  bool operator==(const MapRecord&) const = default;
};

void save_map(const std::vector<MapRecord>& records, std::ostream& sink);
std::vector<MapRecord> load_map(std::istream& source);
void save_map(const std::vector<MapRecord>& records, const std::filesystem::path& path);
std::vector<MapRecord> load_map(const std::filesystem::path& path);

EmbeddingIndex build_from_map(const std::vector<MapRecord>& records);

}  // namespace polarloc::index
