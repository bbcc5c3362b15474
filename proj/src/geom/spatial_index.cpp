#include "pcal/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pcal/error.hpp"
#include "pcal/kernels.hpp"

namespace pcal {
namespace {

bool closer(const Neighbor& a, const Neighbor& b) noexcept {
  if (a.squared_distance != b.squared_distance) return a.squared_distance < b.squared_distance;
  return a.id < b.id;
}

}  // namespace

SpatialIndex::SpatialIndex(const PointCloud& cloud) : points_(cloud.positions) {
  validate(cloud);
  if (points_.size() > 0xffffffffu) throw InvalidParameter("too many points");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), PointId{0});
  nodes_.reserve(2 * points_.size() / kLeafSize + 2);
  build(0, static_cast<std::uint32_t>(points_.size()));

  xs_.resize(points_.size());
  ys_.resize(points_.size());
  zs_.resize(points_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) {
    const auto& p = points_[order_[i]];
    xs_[i] = p[0];
    ys_[i] = p[1];
    zs_[i] = p[2];
  }
}

std::int32_t SpatialIndex::build(std::uint32_t begin, std::uint32_t end) {
  Node node{};
  node.begin = begin;
  node.end = end;
  for (int d = 0; d < 3; ++d) {
    node.lo[d] = points_[order_[begin]][d];
    node.hi[d] = node.lo[d];
  }
  for (std::uint32_t i = begin; i < end; ++i) {
    const auto& p = points_[order_[i]];
    for (int d = 0; d < 3; ++d) {
      node.lo[d] = std::min(node.lo[d], p[d]);
      node.hi[d] = std::max(node.hi[d], p[d]);
    }
  }
  const auto index = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= kLeafSize) return index;

  int axis = 0;
  for (int d = 1; d < 3; ++d) {
    if (node.hi[d] - node.lo[d] > node.hi[axis] - node.lo[axis]) axis = d;
  }
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](PointId a, PointId b) {
                     const float pa = points_[a][axis];
                     const float pb = points_[b][axis];
                     return pa != pb ? pa < pb : a < b;
                   });
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[index].left = left;
  nodes_[index].right = right;
  return index;
}

float SpatialIndex::box_distance(const Node& node, const Point3& q) const noexcept {
  // Same evaluation order as squared_distance, so the bound never exceeds the
  // computed distance of any point inside the box.
  float g[3];
  for (int d = 0; d < 3; ++d) {
    if (q[d] < node.lo[d]) {
      g[d] = node.lo[d] - q[d];
    } else if (q[d] > node.hi[d]) {
      g[d] = q[d] - node.hi[d];
    } else {
      g[d] = 0.0f;
    }
  }
  return (g[0] * g[0] + g[1] * g[1]) + g[2] * g[2];
}

void SpatialIndex::knn_search(std::int32_t ni, const Point3& q, std::size_t k,
                              std::int64_t exclude, std::vector<Neighbor>& heap,
                              std::vector<float>& scratch) const {
  const Node& node = nodes_[ni];
  if (heap.size() == k && box_distance(node, q) > heap.front().squared_distance) return;

  if (node.left < 0) {
    const std::size_t count = node.end - node.begin;
    scratch.resize(count);
    kernels::active().squared_distances(q.data(), xs_.data() + node.begin, ys_.data() + node.begin,
                                        zs_.data() + node.begin, count, scratch.data());
    for (std::size_t i = 0; i < count; ++i) {
      const PointId id = order_[node.begin + i];
      if (static_cast<std::int64_t>(id) == exclude) continue;
      const Neighbor cand{id, scratch[i]};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), closer);
      } else if (closer(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), closer);
      }
    }
    return;
  }

  std::int32_t near = node.left;
  std::int32_t far = node.right;
  if (box_distance(nodes_[far], q) < box_distance(nodes_[near], q)) std::swap(near, far);
  knn_search(near, q, k, exclude, heap, scratch);
  knn_search(far, q, k, exclude, heap, scratch);
}

void SpatialIndex::radius_search(std::int32_t ni, const Point3& q, float r2, std::int64_t exclude,
                                 std::vector<Neighbor>& out, std::vector<float>& scratch) const {
  const Node& node = nodes_[ni];
  if (box_distance(node, q) > r2) return;
  if (node.left < 0) {
    const std::size_t count = node.end - node.begin;
    scratch.resize(count);
    kernels::active().squared_distances(q.data(), xs_.data() + node.begin, ys_.data() + node.begin,
                                        zs_.data() + node.begin, count, scratch.data());
    for (std::size_t i = 0; i < count; ++i) {
      const PointId id = order_[node.begin + i];
      if (static_cast<std::int64_t>(id) == exclude) continue;
      if (scratch[i] <= r2) out.push_back({id, scratch[i]});
    }
    return;
  }
  radius_search(node.left, q, r2, exclude, out, scratch);
  radius_search(node.right, q, r2, exclude, out, scratch);
}

std::vector<Neighbor> SpatialIndex::query_with_distances(const Point3& q, const NeighborMode& mode,
                                                         std::int64_t exclude) const {
  std::vector<Neighbor> result;
  std::vector<float> scratch;
  if (const auto* knn = std::get_if<Knn>(&mode)) {
    if (knn->k == 0) throw InvalidParameter("KNN requires k >= 1");
    const std::size_t available = size() - (exclude >= 0 ? 1 : 0);
    const std::size_t k = std::min(knn->k, available);
    if (k == 0) return result;
    result.reserve(k);
    knn_search(0, q, k, exclude, result, scratch);
  } else {
    const float radius = std::get<Fdn>(mode).radius;
    if (!(radius > 0.0f)) throw InvalidParameter("FDN requires radius > 0");
    radius_search(0, q, radius * radius, exclude, result, scratch);
  }
  std::sort(result.begin(), result.end(), closer);
  return result;
}

std::vector<PointId> SpatialIndex::query(const Point3& q, const NeighborMode& mode) const {
  const auto found = query_with_distances(q, mode);
  std::vector<PointId> ids(found.size());
  std::transform(found.begin(), found.end(), ids.begin(), [](const Neighbor& n) { return n.id; });
  return ids;
}

std::vector<PointId> SpatialIndex::query(PointId id, const NeighborMode& mode) const {
  if (id >= size()) throw InvalidParameter("point id out of range");
  const auto found = query_with_distances(points_[id], mode, id);
  std::vector<PointId> ids(found.size());
  std::transform(found.begin(), found.end(), ids.begin(), [](const Neighbor& n) { return n.id; });
  return ids;
}

}  // namespace pcal
