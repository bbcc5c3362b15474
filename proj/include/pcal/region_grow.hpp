#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcal/geom.hpp"
#include "pcal/labels.hpp"
#include "pcal/spatial_index.hpp"

namespace pcal {

enum class GrowMode { NormalAngle, ColorDistance, KnnBall, FdnBall };

struct GrowConfig {
  GrowMode mode = GrowMode::NormalAngle;
  NeighborMode connectivity = Knn{8};
  double angle_threshold_deg = 8.0;
  double color_threshold = 0.1;
  double max_region_fraction = 0.05;
};

void validate(const GrowConfig& config);

// Text forms used in configs and request bodies: "normal_angle", "color",
// "knn_ball", "fdn_ball"; neighbor modes as "knn:8" or "fdn:0.05".
std::string grow_mode_name(GrowMode mode);
GrowMode parse_grow_mode(std::string_view text);
std::string neighbor_mode_string(const NeighborMode& mode);
NeighborMode parse_neighbor_mode(std::string_view text);

/// Angle between two normals folded into [0, 90] degrees.
double folded_angle_deg(const Point3& a, const Point3& b) noexcept;

/// Breadth-first label propagation from seed points over the connectivity
/// graph. Sources are every Seed/Corrected entry of `seeds` (or `sources` when
/// given), queued in ascending id. A neighbor j of i is claimed iff it is
/// unlabeled and the mode criterion holds between i and j; at most
/// ceil(max_region_fraction * N) points are grown per source.
LabelMap grow_regions(const PointCloud& cloud, const LabelMap& seeds, const GrowConfig& config,
                      const SpatialIndex& index,
                      const std::optional<std::vector<PointId>>& sources = std::nullopt);

}  // namespace pcal
