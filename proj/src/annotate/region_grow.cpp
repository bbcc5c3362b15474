#include "pcal/region_grow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <numbers>

#include "pcal/error.hpp"

namespace pcal {

void validate(const GrowConfig& config) {
  if (!(config.angle_threshold_deg > 0)) throw InvalidParameter("angle_threshold must be > 0");
  if (!(config.color_threshold > 0)) throw InvalidParameter("color_threshold must be > 0");
  if (!(config.max_region_fraction > 0 && config.max_region_fraction <= 1)) {
    throw InvalidParameter("max_region_fraction must be in (0, 1]");
  }
  if (const auto* knn = std::get_if<Knn>(&config.connectivity); knn && knn->k == 0) {
    throw InvalidParameter("connectivity KNN requires k >= 1");
  }
  if (const auto* fdn = std::get_if<Fdn>(&config.connectivity); fdn && !(fdn->radius > 0)) {
    throw InvalidParameter("connectivity FDN requires radius > 0");
  }
}

std::string grow_mode_name(GrowMode mode) {
  switch (mode) {
    case GrowMode::NormalAngle: return "normal_angle";
    case GrowMode::ColorDistance: return "color";
    case GrowMode::KnnBall: return "knn_ball";
    case GrowMode::FdnBall: return "fdn_ball";
  }
  return "?";
}

GrowMode parse_grow_mode(std::string_view text) {
  for (auto m : {GrowMode::NormalAngle, GrowMode::ColorDistance, GrowMode::KnnBall, GrowMode::FdnBall}) {
    if (text == grow_mode_name(m)) return m;
  }
  throw InvalidParameter("unknown grow mode '" + std::string(text) + "'");
}

std::string neighbor_mode_string(const NeighborMode& mode) {
  if (const auto* k = std::get_if<Knn>(&mode)) return "knn:" + std::to_string(k->k);
  // shortest text that reads back as the same float
  const float r = std::get<Fdn>(mode).radius;
  char buf[48];
  for (int digits = 1; digits <= 9; ++digits) {
    std::snprintf(buf, sizeof buf, "%.*g", digits, double(r));
    if (std::strtof(buf, nullptr) == r) break;
  }
  return std::string("fdn:") + buf;
}

NeighborMode parse_neighbor_mode(std::string_view text) {
  const auto colon = text.find(':');
  const std::string kind(text.substr(0, colon));
  const std::string arg = colon == std::string_view::npos ? "" : std::string(text.substr(colon + 1));
  char* end = nullptr;
  if (kind == "knn" && !arg.empty()) {
    const long k = std::strtol(arg.c_str(), &end, 10);
    if (*end == 0 && k >= 1) return Knn{std::size_t(k)};
  } else if (kind == "fdn" && !arg.empty()) {
    const double r = std::strtod(arg.c_str(), &end);
    if (*end == 0 && r > 0) return Fdn{float(r)};
  }
  throw InvalidParameter("bad neighbor mode '" + std::string(text) + "' (expected knn:<k> or fdn:<radius>)");
}

double folded_angle_deg(const Point3& a, const Point3& b) noexcept {
  const double dot = double(a[0]) * b[0] + double(a[1]) * b[1] + double(a[2]) * b[2];
  const double na = std::sqrt(double(a[0]) * a[0] + double(a[1]) * a[1] + double(a[2]) * a[2]);
  const double nb = std::sqrt(double(b[0]) * b[0] + double(b[1]) * b[1] + double(b[2]) * b[2]);
  if (na == 0 || nb == 0) return 90.0;
  const double c = std::clamp(std::abs(dot) / (na * nb), 0.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

LabelMap grow_regions(const PointCloud& cloud, const LabelMap& seeds, const GrowConfig& config,
                      const SpatialIndex& index, const std::optional<std::vector<PointId>>& sources) {
  validate(config);
  validate(seeds);
  const std::size_t n = cloud.size();
  if (seeds.size() != n || index.size() != n) {
    throw InvalidParameter("cloud, labels and index sizes differ");
  }
  if (config.mode == GrowMode::NormalAngle && !cloud.normals) {
    throw InvalidParameter("normal-angle growing requires normals");
  }
  if (config.mode == GrowMode::ColorDistance && !cloud.colors) {
    throw InvalidParameter("color-distance growing requires colors");
  }

  std::vector<PointId> roots;
  if (sources) {
    roots = *sources;
    std::sort(roots.begin(), roots.end());
    roots.erase(std::unique(roots.begin(), roots.end()), roots.end());
    for (PointId r : roots) {
      if (r >= n || !seeds.is_labeled(r)) throw InvalidParameter("growth source must be labeled");
    }
  } else {
    for (PointId i = 0; i < n; ++i) {
      const Provenance p = seeds.provenance[i];
      if (p == Provenance::Seed || p == Provenance::Corrected) roots.push_back(i);
    }
  }
  if (roots.empty()) throw InvalidParameter("region growing needs at least one seed");

  const auto cap = static_cast<std::size_t>(std::ceil(config.max_region_fraction * double(n)));
  const double color_t2 = config.color_threshold * config.color_threshold;

  auto accepts = [&](PointId from, PointId to) {
    switch (config.mode) {
      case GrowMode::NormalAngle:
        return folded_angle_deg((*cloud.normals)[from], (*cloud.normals)[to]) <=
               config.angle_threshold_deg;
      case GrowMode::ColorDistance: {
        const auto& a = (*cloud.colors)[from];
        const auto& b = (*cloud.colors)[to];
        double s = 0;
        for (int d = 0; d < 3; ++d) s += (double(a[d]) - b[d]) * (double(a[d]) - b[d]);
        return s <= color_t2;
      }
      case GrowMode::KnnBall:
      case GrowMode::FdnBall:
        return true;
    }
    return false;
  };

  LabelMap out = seeds;
  std::vector<std::size_t> grown(roots.size(), 0);
  struct Item {
    PointId point;
    std::uint32_t root;
  };
  std::deque<Item> queue;
  for (std::uint32_t r = 0; r < roots.size(); ++r) queue.push_back({roots[r], r});

  while (!queue.empty()) {
    const Item item = queue.front();
    queue.pop_front();
    if (grown[item.root] >= cap) continue;
    const int label = out.labels[item.point];
    for (PointId j : index.query(item.point, config.connectivity)) {
      if (grown[item.root] >= cap) break;
      if (out.is_labeled(j) || !accepts(item.point, j)) continue;
      out.labels[j] = label;
      out.provenance[j] = Provenance::Grown;
      ++grown[item.root];
      queue.push_back({j, item.root});
    }
  }
  return out;
}

}  // namespace pcal
