#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pcal/geom.hpp"

namespace pcal {

inline constexpr int kUnlabeled = -1;

/// Origin of a point's label. Write authority: Corrected > Seed > Grown >
/// Predicted.
enum class Provenance : std::uint8_t { None = 0, Seed = 1, Grown = 2, Predicted = 3, Corrected = 4 };

std::string_view provenance_name(Provenance p) noexcept;
int authority(Provenance p) noexcept;

struct LabelMap {
  int num_classes = 2;
  std::vector<int> labels;
  std::vector<Provenance> provenance;

  LabelMap() = default;
  LabelMap(std::size_t n, int classes)
      : num_classes(classes), labels(n, kUnlabeled), provenance(n, Provenance::None) {}

  std::size_t size() const noexcept { return labels.size(); }
  bool is_labeled(std::size_t i) const noexcept { return labels[i] != kUnlabeled; }
  std::size_t labeled_count() const noexcept;
  bool is_full() const noexcept;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Throws InvalidParameter if the map breaks its invariants (class ids in
/// range, Seed/Corrected entries labeled, consistent lengths, C >= 2).
void validate(const LabelMap& labels);

/// Fully labeled map with the given provenance for every entry.
LabelMap make_label_map(const std::vector<int>& labels, int num_classes,
                        Provenance provenance = Provenance::Seed);

// Sidecar format: "classes=<C>" then one integer per line, -1 for unlabeled.
std::string write_labels(const LabelMap& labels);
LabelMap read_labels(std::string_view text);
void write_labels_file(const LabelMap& labels, const std::string& path);
LabelMap read_labels_file(const std::string& path);

/// A cloud together with its (usually full) label map.
struct LabeledCloud {
  PointCloud cloud;
  LabelMap labels;
};

}  // namespace pcal
