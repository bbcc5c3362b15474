#include "pcal/labels.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "pcal/error.hpp"

namespace pcal {

std::string_view provenance_name(Provenance p) noexcept {
  switch (p) {
    case Provenance::None: return "none";
    case Provenance::Seed: return "seed";
    case Provenance::Grown: return "grown";
    case Provenance::Predicted: return "predicted";
    case Provenance::Corrected: return "corrected";
  }
  return "unknown";
}

int authority(Provenance p) noexcept {
  switch (p) {
    case Provenance::None: return 0;
    case Provenance::Predicted: return 1;
    case Provenance::Grown: return 2;
    case Provenance::Seed: return 3;
    case Provenance::Corrected: return 4;
  }
  return 0;
}

std::size_t LabelMap::labeled_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](int l) { return l != kUnlabeled; }));
}

bool LabelMap::is_full() const noexcept {
  return std::none_of(labels.begin(), labels.end(), [](int l) { return l == kUnlabeled; });
}

void validate(const LabelMap& map) {
  if (map.num_classes < 2) throw InvalidParameter("num_classes must be >= 2");
  if (map.labels.size() != map.provenance.size()) {
    throw InvalidParameter("labels and provenance differ in length");
  }
  for (std::size_t i = 0; i < map.size(); ++i) {
    const int l = map.labels[i];
    if (l != kUnlabeled && (l < 0 || l >= map.num_classes)) {
      throw InvalidParameter("class id out of range at point " + std::to_string(i));
    }
    const Provenance p = map.provenance[i];
    if ((p == Provenance::Seed || p == Provenance::Corrected) && l == kUnlabeled) {
      throw InvalidParameter("seed/corrected entry without a label at point " + std::to_string(i));
    }
  }
}

LabelMap make_label_map(const std::vector<int>& labels, int num_classes, Provenance provenance) {
  LabelMap map(labels.size(), num_classes);
  map.labels = labels;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    map.provenance[i] = labels[i] == kUnlabeled ? Provenance::None : provenance;
  }
  validate(map);
  return map;
}

std::string write_labels(const LabelMap& map) {
  std::string out = "classes=" + std::to_string(map.num_classes) + "\n";
  for (int l : map.labels) {
    out += std::to_string(l);
    out += '\n';
  }
  return out;
}

LabelMap read_labels(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(1, "empty label file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("classes=", 0) != 0) throw ParseError(line_no, "expected 'classes=<C>'");
  int classes = 0;
  try {
    classes = std::stoi(line.substr(8));
  } catch (const std::exception&) {
    throw ParseError(line_no, "bad class count");
  }
  if (classes < 2) throw ParseError(line_no, "class count must be >= 2");

  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    int v = 0;
    try {
      std::size_t used = 0;
      v = std::stoi(line, &used);
      if (used != line.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(line_no, "bad label '" + line + "'");
    }
    if (v < kUnlabeled || v >= classes) throw ParseError(line_no, "label out of range");
    labels.push_back(v);
  }
  LabelMap map(labels.size(), classes);
  map.labels = std::move(labels);
  for (std::size_t i = 0; i < map.size(); ++i) {
    map.provenance[i] = map.labels[i] == kUnlabeled ? Provenance::None : Provenance::Seed;
  }
  return map;
}

void write_labels_file(const LabelMap& labels, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << write_labels(labels);
}

LabelMap read_labels_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return read_labels(ss.str());
}

}  // namespace pcal
