#include <algorithm>
#include <cmath>

#include "pcal/error.hpp"
#include "pcal/geom.hpp"

namespace pcal {

void validate(const PointCloud& cloud) {
  const std::size_t n = cloud.size();
  if (n == 0) throw InvalidParameter("point cloud is empty");
  for (std::size_t i = 0; i < n; ++i) {
    for (float v : cloud.positions[i]) {
      if (!std::isfinite(v)) {
        throw InvalidParameter("non-finite coordinate at point " + std::to_string(i));
      }
    }
  }
  if (cloud.colors && cloud.colors->size() != n) {
    throw InvalidParameter("color count does not match point count");
  }
  if (cloud.normals && cloud.normals->size() != n) {
    throw InvalidParameter("normal count does not match point count");
  }
}

float distance(const Point3& a, const Point3& b) noexcept {
  return std::sqrt(squared_distance(a, b));
}

PointCloud normalize_cloud(const PointCloud& cloud) {
  validate(cloud);
  const std::size_t n = cloud.size();
  double c[3] = {0, 0, 0};
  for (const auto& p : cloud.positions) {
    for (int d = 0; d < 3; ++d) c[d] += p[d];
  }
  for (double& v : c) v /= static_cast<double>(n);

  double max_norm = 0;
  for (const auto& p : cloud.positions) {
    double s = 0;
    for (int d = 0; d < 3; ++d) s += (p[d] - c[d]) * (p[d] - c[d]);
    max_norm = std::max(max_norm, std::sqrt(s));
  }
  const double scale = max_norm > 0 ? 1.0 / max_norm : 1.0;

  PointCloud out = cloud;
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < 3; ++d) {
      out.positions[i][d] = static_cast<float>((cloud.positions[i][d] - c[d]) * scale);
    }
  }
  return out;
}

}  // namespace pcal
