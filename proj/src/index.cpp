#include "polarloc/index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>

#include "polarloc/binio.hpp"
#include "polarloc/error.hpp"

namespace polarloc::index {

namespace {

// Slack on plane-distance pruning so that rounding in the accumulated
// squared distance can never discard a point the linear scan would keep.
constexpr double kPruneSlack = 1e-9;

bool before(const Neighbor& a, const Neighbor& b) noexcept {
  if (a.distance != b.distance) return a.distance < b.distance;
  return a.insertion < b.insertion;
}

}  // namespace

EmbeddingIndex EmbeddingIndex::build(std::vector<IndexedPoint> points, std::size_t leaf_size) {
  if (points.empty()) throw ConfigError("EmbeddingIndex::build: need at least one point");
  const std::size_t dim = points.front().embedding.dim();
  if (dim == 0) throw ConfigError("EmbeddingIndex::build: zero-dimensional embeddings");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].embedding.dim() != dim) {
      throw ConfigError("EmbeddingIndex::build: point " + std::to_string(i) + " has dimension " +
                        std::to_string(points[i].embedding.dim()) + ", expected " + std::to_string(dim));
    }
  }
  EmbeddingIndex idx;
  idx.dim_ = dim;
  idx.points_ = std::move(points);
  idx.order_.resize(idx.points_.size());
  for (std::size_t i = 0; i < idx.order_.size(); ++i) idx.order_[i] = i;
  idx.build_node(0, idx.order_.size(), std::max<std::size_t>(1, leaf_size));
  return idx;
}

std::int64_t EmbeddingIndex::build_node(std::size_t begin, std::size_t end, std::size_t leaf_size) {
  const auto id = static_cast<std::int64_t>(nodes_.size());
  nodes_.push_back(Node{begin, end, 0, 0.0, -1, -1});
  if (end - begin <= leaf_size) return id;

  std::size_t best_dim = 0;
  double best_spread = -1.0;
  for (std::size_t d = 0; d < dim_; ++d) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = begin; i < end; ++i) {
      const double v = points_[order_[i]].embedding.values[d];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo > best_spread) {
      best_spread = hi - lo;
      best_dim = d;
    }
  }
  if (!(best_spread > 0.0)) return id;  // all points identical: keep as a leaf

  const std::size_t mid = begin + (end - begin) / 2;
  auto key_less = [&](std::size_t a, std::size_t b) {
    const double va = points_[a].embedding.values[best_dim];
    const double vb = points_[b].embedding.values[best_dim];
    if (va != vb) return va < vb;
    return a < b;
  };
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end), key_less);
  const double split = points_[order_[mid]].embedding.values[best_dim];

  nodes_[static_cast<std::size_t>(id)].split_dim = best_dim;
  nodes_[static_cast<std::size_t>(id)].split_value = split;
  const std::int64_t left = build_node(begin, mid, leaf_size);
  const std::int64_t right = build_node(mid, end, leaf_size);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

std::size_t EmbeddingIndex::depth() const noexcept {
  std::size_t best = 0;
  std::vector<std::pair<std::int64_t, std::size_t>> stack{{0, 1}};
  while (!stack.empty()) {
    auto [n, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    const Node& node = nodes_[static_cast<std::size_t>(n)];
    if (node.left >= 0) stack.emplace_back(node.left, d + 1);
    if (node.right >= 0) stack.emplace_back(node.right, d + 1);
  }
  return best;
}

void EmbeddingIndex::check_query(const EmbeddingVector& query) const {
  if (query.dim() != dim_) {
    throw QueryError("query has dimension " + std::to_string(query.dim()) + ", index has " +
                     std::to_string(dim_));
  }
}

std::vector<Neighbor> EmbeddingIndex::knn(const EmbeddingVector& query, std::size_t n) const {
  check_query(query);
  if (n < 1 || n > points_.size()) {
    throw QueryError("knn: N must be in [1, " + std::to_string(points_.size()) + "], got " +
                     std::to_string(n));
  }
  // Max-heap of the current best n under the (distance, insertion) order.
  auto heap_less = [](const Neighbor& a, const Neighbor& b) { return before(a, b); };
  std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(heap_less)> heap(heap_less);

  auto worst_sq = [&]() -> double {
    if (heap.size() < n) return std::numeric_limits<double>::infinity();
    const double d = heap.top().distance;
    return d * d;
  };
  auto visit = [&](auto&& self, std::int64_t node_id) -> void {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.left < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t p = order_[i];
        Neighbor cand{points_[p].place_id, distance(query.values, points_[p].embedding.values), p};
        if (heap.size() < n) {
          heap.push(cand);
        } else if (before(cand, heap.top())) {
          heap.pop();
          heap.push(cand);
        }
      }
      return;
    }
    const double diff = query.values[node.split_dim] - node.split_value;
    const std::int64_t near = diff <= 0.0 ? node.left : node.right;
    const std::int64_t far = diff <= 0.0 ? node.right : node.left;
    self(self, near);
    if (diff * diff <= worst_sq() * (1.0 + kPruneSlack) + kPruneSlack) self(self, far);
  };
  visit(visit, 0);

  std::vector<Neighbor> out;
  out.reserve(heap.size());
  while (!heap.empty()) {
    out.push_back(heap.top());
    heap.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<Neighbor> EmbeddingIndex::ball(const EmbeddingVector& query, double radius) const {
  check_query(query);
  if (!(radius >= 0.0)) throw QueryError("ball: radius must be non-negative");
  std::vector<Neighbor> out;
  const double r_sq = radius * radius;
  auto visit = [&](auto&& self, std::int64_t node_id) -> void {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.left < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t p = order_[i];
        const double d = distance(query.values, points_[p].embedding.values);
        if (d <= radius) out.push_back({points_[p].place_id, d, p});
      }
      return;
    }
    const double diff = query.values[node.split_dim] - node.split_value;
    const std::int64_t near = diff <= 0.0 ? node.left : node.right;
    const std::int64_t far = diff <= 0.0 ? node.right : node.left;
    self(self, near);
    if (diff * diff <= r_sq * (1.0 + kPruneSlack) + kPruneSlack) self(self, far);
  };
  visit(visit, 0);
  std::sort(out.begin(), out.end(), before);
  return out;
}

std::vector<Neighbor> brute_force_knn(const std::vector<IndexedPoint>& points,
                                      const EmbeddingVector& query, std::size_t n) {
  std::vector<Neighbor> all;
  all.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    all.push_back({points[i].place_id, distance(query.values, points[i].embedding.values), i});
  }
  std::sort(all.begin(), all.end(), before);
  all.resize(std::min(n, all.size()));
  return all;
}

std::vector<Neighbor> brute_force_ball(const std::vector<IndexedPoint>& points,
                                       const EmbeddingVector& query, double radius) {
  std::vector<Neighbor> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d = distance(query.values, points[i].embedding.values);
    if (d <= radius) out.push_back({points[i].place_id, d, i});
  }
  std::sort(out.begin(), out.end(), before);
  return out;
}

// ---- Map database ----------------------------------------------------------

void save_map(const std::vector<MapRecord>& records, std::ostream& sink) {
  const std::size_t dim = records.empty() ? 0 : records.front().embedding.dim();
  binio::Writer w(sink);
  w.magic("PMAP");
  w.put<std::uint32_t>(kMapFormatVersion);
  w.put<std::uint64_t>(records.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dim));
  for (const auto& r : records) {
    if (r.embedding.dim() != dim) throw ConfigError("save_map: mixed embedding dimensions");
    w.put<std::uint64_t>(r.place_id);
    w.put<double>(r.pose.x);
    w.put<double>(r.pose.y);
    w.put<double>(r.pose.yaw);
    w.put<std::int64_t>(r.timestamp_ns);
    w.put_array(r.embedding.values.data(), dim);
  }
  w.finish("map database");
}

std::vector<MapRecord> load_map(std::istream& source) {
  binio::Reader r(source);
  r.expect_magic("PMAP", "map database");
  const std::size_t version_at = r.offset();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kMapFormatVersion) {
    throw FormatError("unsupported map database version " + std::to_string(version), version_at);
  }
  const std::size_t count_at = r.offset();
  const auto count = r.get<std::uint64_t>("record count");
  const auto dim = r.get<std::uint32_t>("embedding dimension");
  if (dim > 65536 || count > (std::uint64_t{1} << 32)) {
    throw FormatError("map database header out of range", count_at);
  }
  std::vector<MapRecord> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    MapRecord m;
    m.place_id = r.get<std::uint64_t>("place id");
    m.pose.x = r.get<double>("pose x");
    m.pose.y = r.get<double>("pose y");
    m.pose.yaw = r.get<double>("pose yaw");
    m.timestamp_ns = r.get<std::int64_t>("timestamp");
    m.embedding.values.resize(dim);
    r.get_array(m.embedding.values.data(), dim, "embedding");
    out.push_back(std::move(m));
  }
  return out;
}

void save_map(const std::vector<MapRecord>& records, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  save_map(records, os);
}

std::vector<MapRecord> load_map(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return load_map(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

EmbeddingIndex build_from_map(const std::vector<MapRecord>& records) {
  std::vector<IndexedPoint> pts;
  pts.reserve(records.size());
  for (const auto& r : records) pts.push_back({r.embedding, r.place_id});
  return EmbeddingIndex::build(std::move(pts));
}

}  // namespace polarloc::index
