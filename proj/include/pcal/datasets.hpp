#pragma once

// Synthetic labeled shapes built from simple parametric parts, and the
// on-disk dataset layout (<stem>.ply + <stem>.labels + manifest.json).

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pcal/labels.hpp"

namespace pcal::data {

enum class Family { Chair, Table, Lamp, TwoClassPlant };

std::string_view family_name(Family f) noexcept;
/// Accepts "chair", "table", "lamp", "plant" (case-insensitive).
Family parse_family(std::string_view name);

struct ShapeSpec {
  Family family = Family::Chair;
  int part_count = 3;
  double noise_sigma = 0.01;  // in normalized units
  std::size_t points_n = 1024;
  std::uint64_t rng_seed = 0;
  double size_variation = 0.25;  // each dimension is nominal * U[1-v, 1+v]
};

void validate(const ShapeSpec& spec);

/// One surface patch of a shape, in the canonical frame (z up).
struct Primitive {
  enum class Kind { Box, Cylinder, Frustum, Sphere };
  Kind kind = Kind::Box;
  int part = 0;        // finest-granularity part index
  bool solid = true;   // hides surface of other primitives lying inside it
  bool cap_bottom = false;  // cylinder/frustum discs
  bool cap_top = false;
  std::array<double, 3> lo{}, hi{};  // box corners
  std::array<double, 3> center{};    // cylinder/frustum axis foot (x, y, z0) or sphere center
  double height = 0;
  double r0 = 0, r1 = 0;  // bottom and top radius; sphere uses r0
};

/// normalized = (Rz(rotation) * canonical + noise - centroid) * scale
struct ShapeFrame {
  double rotation = 0;
  std::array<double, 3> centroid{};
  double scale = 1;
};

struct GeneratedShape {
  LabeledCloud data;
  ShapeFrame frame;
  std::vector<Primitive> primitives;
  std::vector<std::uint32_t> primitive_of;  // per point
};

GeneratedShape generate_shape_detailed(const ShapeSpec& spec);
LabeledCloud generate_shape(const ShapeSpec& spec);

/// Shape i uses seed rng_seed + first_index + i.
std::vector<LabeledCloud> generate_dataset(Family family, std::size_t count, int part_count,
                                           std::uint64_t rng_seed, std::size_t points_n = 1024,
                                           double noise_sigma = 0.01, std::size_t first_index = 0);

/// Writes <dir>/<stem>_NNN.ply/.labels and <dir>/manifest.json; returns the
/// manifest path.
std::string write_dataset(const std::vector<LabeledCloud>& items, const std::string& dir,
                          const std::string& stem);
std::vector<LabeledCloud> read_dataset(const std::string& manifest_path);

}  // namespace pcal::data
