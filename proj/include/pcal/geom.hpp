#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pcal {

using Point3 = std::array<float, 3>;

/// N points with optional per-point colors (in [0,1]) and unit normals.
struct PointCloud {
  std::string id;
  std::vector<Point3> positions;
  std::optional<std::vector<Point3>> colors;
  std::optional<std::vector<Point3>> normals;

  std::size_t size() const noexcept { return positions.size(); }
};

/// Throws InvalidParameter if the cloud is empty, has a non-finite
/// coordinate, or carries attribute arrays of the wrong length.
void validate(const PointCloud& cloud);

/// Centers the cloud on its centroid and scales it so the farthest point has
/// norm 1. A cloud whose points all coincide is only translated.
PointCloud normalize_cloud(const PointCloud& cloud);

/// Squared Euclidean distance, evaluated as ((dx*dx + dy*dy) + dz*dz) in
/// float. Every distance comparison in the library goes through this form.
inline float squared_distance(const Point3& a, const Point3& b) noexcept {
  const float dx = a[0] - b[0];
  const float dy = a[1] - b[1];
  const float dz = a[2] - b[2];
  return (dx * dx + dy * dy) + dz * dz;
}

float distance(const Point3& a, const Point3& b) noexcept;

// ASCII PLY.
PointCloud load_ply(std::string_view text);
PointCloud load_ply_file(const std::string& path);
std::string save_ply(const PointCloud& cloud);
void save_ply_file(const PointCloud& cloud, const std::string& path);

}  // namespace pcal
