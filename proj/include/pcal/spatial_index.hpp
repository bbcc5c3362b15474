#pragma once

#include <cstddef>
#include <cstdint>
#include <variant>
#include <vector>

#include "pcal/geom.hpp"

namespace pcal {

using PointId = std::uint32_t;

/// k nearest neighbors.
struct Knn {
  std::size_t k = 8;
};

/// Fixed distance neighbors: every point within `radius` (inclusive).
struct Fdn {
  float radius = 0.05f;
};

using NeighborMode = std::variant<Knn, Fdn>;

struct Neighbor {
  PointId id;
  float squared_distance;
};

/// Exact kd-tree (median split on the widest axis, leaves of at most 16
/// points). Results are ordered by distance, ties by ascending id, and match
/// an exhaustive scan exactly.
class SpatialIndex {
 public:
  explicit SpatialIndex(const PointCloud& cloud);

  std::size_t size() const noexcept { return points_.size(); }
  const Point3& point(PointId id) const { return points_[id]; }

  /// Neighbors of an arbitrary location; coincident points are included.
  std::vector<PointId> query(const Point3& q, const NeighborMode& mode) const;
  /// Neighbors of an indexed point, excluding the point itself.
  std::vector<PointId> query(PointId id, const NeighborMode& mode) const;

  std::vector<Neighbor> query_with_distances(const Point3& q, const NeighborMode& mode,
                                             std::int64_t exclude = -1) const;

  static constexpr std::size_t kLeafSize = 16;

 private:
  struct Node {
    float lo[3];
    float hi[3];
    std::uint32_t begin;
    std::uint32_t end;
    std::int32_t left = -1;
    std::int32_t right = -1;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void knn_search(std::int32_t node, const Point3& q, std::size_t k, std::int64_t exclude,
                  std::vector<Neighbor>& heap, std::vector<float>& scratch) const;
  void radius_search(std::int32_t node, const Point3& q, float r2, std::int64_t exclude,
                     std::vector<Neighbor>& out, std::vector<float>& scratch) const;
  float box_distance(const Node& node, const Point3& q) const noexcept;

  std::vector<Point3> points_;
  std::vector<Node> nodes_;
  std::vector<PointId> order_;
  std::vector<float> xs_, ys_, zs_;
};

/// Per-point unit normal: eigenvector of the smallest eigenvalue of the
/// covariance of the point and its k nearest neighbors. Sign is arbitrary.
PointCloud estimate_normals(const PointCloud& cloud, std::size_t k);
PointCloud estimate_normals(const PointCloud& cloud, const SpatialIndex& index, std::size_t k);

}  // namespace pcal
