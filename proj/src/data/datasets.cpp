#include "pcal/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "json.hpp"

#include "pcal/error.hpp"
#include "pcal/random.hpp"

namespace pcal::data {

namespace {

using V3 = std::array<double, 3>;
using Kind = Primitive::Kind;
constexpr double kPi = std::numbers::pi;
constexpr double kInsideEps = 1e-9;

int part_count_max(Family f) { return f == Family::TwoClassPlant ? 2 : 3; }

// Coarser granularity merges parts: chair seat+back, table legs+shelf,
// lamp base+pole.
int part_to_class(Family f, int part_count, int part) {
  if (part_count == 3 || f == Family::TwoClassPlant) return part;
  switch (f) {
    case Family::Chair: return part <= 1 ? 0 : 1;
    case Family::Table: return part == 0 ? 0 : 1;
    case Family::Lamp: return part <= 1 ? 0 : 1;
    default: return part;
  }
}

Primitive box(int part, V3 lo, V3 hi) {
  Primitive p;
  p.kind = Kind::Box;
  p.part = part;
  p.lo = lo;
  p.hi = hi;
  return p;
}

Primitive round_part(Kind kind, int part, V3 foot, double h, double r0, double r1) {
  Primitive p;
  p.kind = kind;
  p.part = part;
  p.center = foot;
  p.height = h;
  p.r0 = r0;
  p.r1 = r1;
  return p;
}

Primitive sphere(int part, V3 c, double r) {
  Primitive p;
  p.kind = Kind::Sphere;
  p.part = part;
  p.center = c;
  p.r0 = r;
  return p;
}

std::vector<Primitive> build_parts(Family f, Rng& rng, double v) {
  auto dim = [&](double nominal) { return nominal * (1.0 + v * (2.0 * uniform01(rng) - 1.0)); };
  std::vector<Primitive> out;
  switch (f) {
    case Family::Chair: {
      const double w = dim(1.0), d = dim(1.0), t = dim(0.08), lh = dim(0.9), lr = dim(0.045);
      const double bh = dim(0.9), bt = dim(0.08);
      out.push_back(box(0, {-w / 2, -d / 2, lh}, {w / 2, d / 2, lh + t}));
      out.push_back(box(1, {-w / 2, d / 2 - bt, lh + t}, {w / 2, d / 2, lh + t + bh}));
      for (double sx : {-1.0, 1.0}) {
        for (double sy : {-1.0, 1.0}) {
          auto leg = round_part(Kind::Cylinder, 2, {sx * (w / 2 - lr), sy * (d / 2 - lr), 0}, lh, lr, lr);
          leg.cap_bottom = true;
          out.push_back(leg);
        }
      }
      break;
    }
    case Family::Table: {
      const double w = dim(1.2), d = dim(0.8), t = dim(0.06), h = dim(0.75), r = dim(0.04);
      const double sz = dim(0.25) * h, st = dim(0.04);
      out.push_back(box(0, {-w / 2, -d / 2, h}, {w / 2, d / 2, h + t}));
      for (double sx : {-1.0, 1.0}) {
        for (double sy : {-1.0, 1.0}) {
          auto leg = round_part(Kind::Cylinder, 1, {sx * (w / 2 - r), sy * (d / 2 - r), 0}, h, r, r);
          leg.cap_bottom = true;
          out.push_back(leg);
        }
      }
      out.push_back(box(2, {-w / 2 + 2 * r, -d / 2 + 2 * r, sz}, {w / 2 - 2 * r, d / 2 - 2 * r, sz + st}));
      break;
    }
    case Family::Lamp: {
      const double br = dim(0.35), bh = dim(0.06), pr = dim(0.025), ph = dim(1.1);
      const double s0 = dim(0.4), s1 = dim(0.2), sh = dim(0.35);
      auto base = round_part(Kind::Cylinder, 0, {0, 0, 0}, bh, br, br);
      base.cap_bottom = base.cap_top = true;
      out.push_back(base);
      auto pole = round_part(Kind::Cylinder, 1, {0, 0, bh}, ph, pr, pr);
      pole.cap_top = true;
      out.push_back(pole);
      auto shade = round_part(Kind::Frustum, 2, {0, 0, bh + ph - 0.5 * sh}, sh, s0, s1);
      shade.solid = false;  // open lampshade
      out.push_back(shade);
      break;
    }
    case Family::TwoClassPlant: {
      const double r0 = dim(0.3), r1 = dim(0.4), h = dim(0.5), fr = dim(0.45);
      auto pot = round_part(Kind::Frustum, 0, {0, 0, 0}, h, r0, r1);
      pot.cap_bottom = true;
      out.push_back(pot);
      out.push_back(sphere(1, {0, 0, h + 0.7 * fr}, fr));
      break;
    }
  }
  return out;
}

double radius_at(const Primitive& p, double u) { return p.r0 + (p.r1 - p.r0) * u; }

double area(const Primitive& p) {
  switch (p.kind) {
    case Kind::Box: {
      const double dx = p.hi[0] - p.lo[0], dy = p.hi[1] - p.lo[1], dz = p.hi[2] - p.lo[2];
      return 2 * (dx * dy + dy * dz + dx * dz);
    }
    case Kind::Cylinder:
    case Kind::Frustum: {
      const double slant = std::hypot(p.r1 - p.r0, p.height);
      double a = kPi * (p.r0 + p.r1) * slant;
      if (p.cap_bottom) a += kPi * p.r0 * p.r0;
      if (p.cap_top) a += kPi * p.r1 * p.r1;
      return a;
    }
    case Kind::Sphere: return 4 * kPi * p.r0 * p.r0;
  }
  return 0;
}

V3 disc_point(Rng& rng, double cx, double cy, double z, double r) {
  const double rho = r * std::sqrt(uniform01(rng));
  const double th = 2 * kPi * uniform01(rng);
  return {cx + rho * std::cos(th), cy + rho * std::sin(th), z};
}

V3 sample_on(const Primitive& p, Rng& rng) {
  switch (p.kind) {
    case Kind::Box: {
      const double e[3] = {p.hi[0] - p.lo[0], p.hi[1] - p.lo[1], p.hi[2] - p.lo[2]};
      // face pair normal to axis a has area e[b]*e[c]
      const double fa[3] = {e[1] * e[2], e[0] * e[2], e[0] * e[1]};
      double pick = uniform01(rng) * 2 * (fa[0] + fa[1] + fa[2]);
      int axis = 0, side = 0;
      for (int f = 0; f < 6; ++f) {
        if (pick < fa[f / 2] || f == 5) {
          axis = f / 2;
          side = f % 2;
          break;
        }
        pick -= fa[f / 2];
      }
      V3 q;
      for (int k = 0; k < 3; ++k) q[k] = p.lo[k] + e[k] * uniform01(rng);
      q[axis] = side ? p.hi[axis] : p.lo[axis];
      return q;
    }
    case Kind::Cylinder:
    case Kind::Frustum: {
      const double slant = std::hypot(p.r1 - p.r0, p.height);
      const double lateral = kPi * (p.r0 + p.r1) * slant;
      const double bottom = p.cap_bottom ? kPi * p.r0 * p.r0 : 0.0;
      const double top = p.cap_top ? kPi * p.r1 * p.r1 : 0.0;
      double pick = uniform01(rng) * (lateral + bottom + top);
      const double cx = p.center[0], cy = p.center[1], z0 = p.center[2];
      if (pick >= lateral) {
        pick -= lateral;
        if (pick < bottom || top == 0) return disc_point(rng, cx, cy, z0, p.r0);
        return disc_point(rng, cx, cy, z0 + p.height, p.r1);
      }
      // height fraction with density proportional to the local radius
      const double s = uniform01(rng);
      double u = s;
      const double dr = p.r1 - p.r0;
      if (std::abs(dr) > 1e-12) {
        const double total = p.r0 + 0.5 * dr;
        u = (-p.r0 + std::sqrt(p.r0 * p.r0 + 2 * dr * s * total)) / dr;
      }
      const double r = radius_at(p, u);
      const double th = 2 * kPi * uniform01(rng);
      return {cx + r * std::cos(th), cy + r * std::sin(th), z0 + u * p.height};
    }
    case Kind::Sphere: {
      V3 d;
      double n = 0;
      do {
        for (double& c : d) c = standard_normal(rng);
        n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
      } while (n < 1e-12);
      return {p.center[0] + p.r0 * d[0] / n, p.center[1] + p.r0 * d[1] / n, p.center[2] + p.r0 * d[2] / n};
    }
  }
  return {};
}

bool strictly_inside(const Primitive& p, const V3& q) {
  if (!p.solid) return false;
  switch (p.kind) {
    case Kind::Box:
      for (int k = 0; k < 3; ++k) {
        if (!(q[k] > p.lo[k] + kInsideEps && q[k] < p.hi[k] - kInsideEps)) return false;
      }
      return true;
    case Kind::Cylinder:
    case Kind::Frustum: {
      const double u = (q[2] - p.center[2]) / p.height;
      if (!(q[2] > p.center[2] + kInsideEps && q[2] < p.center[2] + p.height - kInsideEps)) return false;
      return std::hypot(q[0] - p.center[0], q[1] - p.center[1]) < radius_at(p, u) - kInsideEps;
    }
    case Kind::Sphere: {
      const double dx = q[0] - p.center[0], dy = q[1] - p.center[1], dz = q[2] - p.center[2];
      return std::sqrt(dx * dx + dy * dy + dz * dz) < p.r0 - kInsideEps;
    }
  }
  return false;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view family_name(Family f) noexcept {
  switch (f) {
    case Family::Chair: return "chair";
    case Family::Table: return "table";
    case Family::Lamp: return "lamp";
    case Family::TwoClassPlant: return "plant";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  const auto n = lower(name);
  if (n == "chair") return Family::Chair;
  if (n == "table") return Family::Table;
  if (n == "lamp") return Family::Lamp;
  if (n == "plant" || n == "twoclassplant") return Family::TwoClassPlant;
  throw InvalidParameter("unknown shape family '" + std::string(name) + "'");
}

void validate(const ShapeSpec& spec) {
  if (spec.part_count < 2 || spec.part_count > part_count_max(spec.family)) {
    throw InvalidParameter(std::string(family_name(spec.family)) + " does not support part_count " +
                           std::to_string(spec.part_count));
  }
  if (spec.points_n < 64) throw InvalidParameter("points_n must be >= 64");
  if (!(spec.noise_sigma >= 0) || !std::isfinite(spec.noise_sigma)) throw InvalidParameter("noise_sigma must be >= 0");
  if (!(spec.size_variation >= 0 && spec.size_variation < 1)) throw InvalidParameter("size_variation must be in [0, 1)");
}

GeneratedShape generate_shape_detailed(const ShapeSpec& spec) {
  validate(spec);
  Rng rng(spec.rng_seed);
  GeneratedShape g;
  g.primitives = build_parts(spec.family, rng, spec.size_variation);
  g.frame.rotation = 2 * kPi * uniform01(rng);

  const auto& prims = g.primitives;
  std::vector<double> cdf;
  double total = 0;
  for (const auto& p : prims) cdf.push_back(total += area(p));
  auto visible = [&](std::size_t k, const V3& q) {
    for (std::size_t o = 0; o < prims.size(); ++o) {
      if (o != k && strictly_inside(prims[o], q)) return false;
    }
    return true;
  };
  auto draw_from = [&](const std::vector<std::size_t>& allowed, double allowed_total) {
    for (std::size_t attempt = 0; attempt < 100000; ++attempt) {
      double pick = uniform01(rng) * allowed_total;
      std::size_t k = allowed.back();
      for (std::size_t a : allowed) {
        if (pick < area(prims[a])) {
          k = a;
          break;
        }
        pick -= area(prims[a]);
      }
      const V3 q = sample_on(prims[k], rng);
      if (visible(k, q)) return std::pair{k, q};
    }
    throw Error("surface sampling did not converge");
  };

  std::vector<V3> pts;
  // one point per part first so no class comes out empty
  const int parts = part_count_max(spec.family);
  for (int part = 0; part < parts; ++part) {
    std::vector<std::size_t> allowed;
    double t = 0;
    for (std::size_t k = 0; k < prims.size(); ++k) {
      if (prims[k].part == part) {
        allowed.push_back(k);
        t += area(prims[k]);
      }
    }
    auto [k, q] = draw_from(allowed, t);
    pts.push_back(q);
    g.primitive_of.push_back(std::uint32_t(k));
  }
  std::vector<std::size_t> all(prims.size());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
  while (pts.size() < spec.points_n) {
    auto [k, q] = draw_from(all, total);
    pts.push_back(q);
    g.primitive_of.push_back(std::uint32_t(k));
  }

  const double c = std::cos(g.frame.rotation), s = std::sin(g.frame.rotation);
  for (auto& q : pts) q = {c * q[0] - s * q[1], s * q[0] + c * q[1], q[2]};

  if (spec.noise_sigma > 0) {
    V3 m{0, 0, 0};
    for (const auto& q : pts)
      for (int k = 0; k < 3; ++k) m[k] += q[k] / double(pts.size());
    double r = 0;
    for (const auto& q : pts) r = std::max(r, std::hypot(q[0] - m[0], q[1] - m[1], q[2] - m[2]));
    const double sd = spec.noise_sigma * r;
    for (auto& q : pts)
      for (double& x : q) x += sd * standard_normal(rng);
  }

  PointCloud raw;
  raw.id = std::string(family_name(spec.family)) + "_" + std::to_string(spec.rng_seed);
  raw.positions.reserve(pts.size());
  for (const auto& q : pts) raw.positions.push_back({float(q[0]), float(q[1]), float(q[2])});

  // same arithmetic as normalize_cloud, kept to report the frame
  V3 cen{0, 0, 0};
  for (const auto& p : raw.positions)
    for (int k = 0; k < 3; ++k) cen[k] += p[k];
  for (double& x : cen) x /= double(raw.size());
  double maxn = 0;
  for (const auto& p : raw.positions) {
    double acc = 0;
    for (int k = 0; k < 3; ++k) acc += (p[k] - cen[k]) * (p[k] - cen[k]);
    maxn = std::max(maxn, std::sqrt(acc));
  }
  g.frame.centroid = cen;
  g.frame.scale = maxn > 0 ? 1.0 / maxn : 1.0;

  g.data.cloud = normalize_cloud(raw);
  g.data.labels = LabelMap(pts.size(), spec.part_count);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    g.data.labels.labels[i] = part_to_class(spec.family, spec.part_count, prims[g.primitive_of[i]].part);
    g.data.labels.provenance[i] = Provenance::Seed;
  }
  return g;
}

LabeledCloud generate_shape(const ShapeSpec& spec) { return generate_shape_detailed(spec).data; }

std::vector<LabeledCloud> generate_dataset(Family family, std::size_t count, int part_count,
                                           std::uint64_t rng_seed, std::size_t points_n,
                                           double noise_sigma, std::size_t first_index) {
  std::vector<LabeledCloud> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ShapeSpec spec;
    spec.family = family;
    spec.part_count = part_count;
    spec.points_n = points_n;
    spec.noise_sigma = noise_sigma;
    spec.rng_seed = rng_seed + first_index + i;
    out.push_back(generate_shape(spec));
  }
  return out;
}

std::string write_dataset(const std::vector<LabeledCloud>& items, const std::string& dir,
                          const std::string& stem) {
  namespace fs = std::filesystem;
  if (items.empty()) throw InvalidParameter("nothing to write");
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["num_classes"] = items.front().labels.num_classes;
  manifest["items"] = nlohmann::json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "_%03zu", i);
    const std::string base = stem + name;
    save_ply_file(items[i].cloud, (fs::path(dir) / (base + ".ply")).string());
    write_labels_file(items[i].labels, (fs::path(dir) / (base + ".labels")).string());
    manifest["items"].push_back({{"cloud", base + ".ply"}, {"labels", base + ".labels"}});
  }
  const auto path = (fs::path(dir) / "manifest.json").string();
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  f << manifest.dump(2) << "\n";
  return path;
}

std::vector<LabeledCloud> read_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream f(manifest_path);
  if (!f) throw Error("cannot open " + manifest_path);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path + ": " + e.what());
  }
  if (!m.contains("num_classes") || !m.contains("items") || !m["items"].is_array()) {
    throw FormatError(manifest_path + ": expected num_classes and items");
  }
  const int C = m["num_classes"].get<int>();
  const auto root = fs::path(manifest_path).parent_path();
  std::vector<LabeledCloud> out;
  for (const auto& it : m["items"]) {
    LabeledCloud lc;
    lc.cloud = load_ply_file((root / it.at("cloud").get<std::string>()).string());
    lc.cloud.id = fs::path(it.at("cloud").get<std::string>()).stem().string();
    lc.labels = read_labels_file((root / it.at("labels").get<std::string>()).string());
    if (lc.labels.num_classes != C) throw FormatError(manifest_path + ": class count differs between items");
    if (lc.labels.size() != lc.cloud.size()) throw FormatError(manifest_path + ": label count differs from cloud");
    out.push_back(std::move(lc));
  }
  return out;
}

}  // namespace pcal::data
