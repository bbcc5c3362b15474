#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pcal/error.hpp"
#include "pcal/geom.hpp"

namespace pcal {
namespace {

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<std::string> properties;
};

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

int find_property(const Element& e, const std::string& name) {
  for (std::size_t i = 0; i < e.properties.size(); ++i) {
    if (e.properties[i] == name) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

PointCloud load_ply(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;

  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next_line() || line != "ply") throw ParseError(line_no, "missing 'ply' magic");

  std::vector<Element> elements;
  bool saw_format = false;
  bool saw_end = false;
  while (next_line()) {
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "format") {
      if (tok.size() != 3 || tok[1] != "ascii") {
        throw ParseError(line_no, "only 'format ascii 1.0' is supported");
      }
      saw_format = true;
    } else if (tok[0] == "comment" || tok[0] == "obj_info") {
      continue;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw ParseError(line_no, "malformed element declaration");
      Element e;
      e.name = tok[1];
      try {
        std::size_t used = 0;
        const long long count = std::stoll(tok[2], &used);
        if (used != tok[2].size() || count < 0) throw std::invalid_argument("count");
        e.count = static_cast<std::size_t>(count);
      } catch (const std::exception&) {
        throw ParseError(line_no, "bad element count '" + tok[2] + "'");
      }
      elements.push_back(std::move(e));
    } else if (tok[0] == "property") {
      if (elements.empty()) throw ParseError(line_no, "property before any element");
      if (tok.size() == 3) {
        elements.back().properties.push_back(tok[2]);
      } else if (tok.size() == 5 && tok[1] == "list") {
        elements.back().properties.push_back(tok[4]);
      } else {
        throw ParseError(line_no, "malformed property declaration");
      }
    } else if (tok[0] == "end_header") {
      saw_end = true;
      break;
    } else {
      throw ParseError(line_no, "unexpected header keyword '" + tok[0] + "'");
    }
  }
  if (!saw_format) throw ParseError(line_no, "missing format line");
  if (!saw_end) throw ParseError(line_no, "missing end_header");
  if (elements.empty() || elements.front().name != "vertex") {
    throw ParseError(line_no, "first element must be 'vertex'");
  }

  const Element& vertex = elements.front();
  const int ix = find_property(vertex, "x");
  const int iy = find_property(vertex, "y");
  const int iz = find_property(vertex, "z");
  if (ix < 0 || iy < 0 || iz < 0) throw ParseError(line_no, "vertex lacks x/y/z properties");
  const int ir = find_property(vertex, "red");
  const int ig = find_property(vertex, "green");
  const int ib = find_property(vertex, "blue");
  const bool has_color = ir >= 0 && ig >= 0 && ib >= 0;
  const int inx = find_property(vertex, "nx");
  const int iny = find_property(vertex, "ny");
  const int inz = find_property(vertex, "nz");
  const bool has_normal = inx >= 0 && iny >= 0 && inz >= 0;

  PointCloud cloud;
  cloud.positions.reserve(vertex.count);
  if (has_color) cloud.colors.emplace().reserve(vertex.count);
  if (has_normal) cloud.normals.emplace().reserve(vertex.count);

  std::vector<double> values;
  for (std::size_t v = 0; v < vertex.count; ++v) {
    if (!next_line()) {
      throw ParseError(line_no, "element count mismatch: expected " +
                                    std::to_string(vertex.count) + " vertices, got " +
                                    std::to_string(v));
    }
    const auto tok = split_ws(line);
    if (tok.size() != vertex.properties.size()) {
      throw ParseError(line_no, "expected " + std::to_string(vertex.properties.size()) +
                                    " values, got " + std::to_string(tok.size()));
    }
    values.assign(tok.size(), 0.0);
    for (std::size_t i = 0; i < tok.size(); ++i) {
      try {
        std::size_t used = 0;
        values[i] = std::stod(tok[i], &used);
        if (used != tok[i].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError(line_no, "bad number '" + tok[i] + "'");
      }
    }
    Point3 p{static_cast<float>(values[ix]), static_cast<float>(values[iy]),
             static_cast<float>(values[iz])};
    for (float c : p) {
      if (!std::isfinite(c)) throw ParseError(line_no, "non-finite coordinate");
    }
    cloud.positions.push_back(p);
    if (has_color) {
      cloud.colors->push_back({static_cast<float>(values[ir] / 255.0),
                               static_cast<float>(values[ig] / 255.0),
                               static_cast<float>(values[ib] / 255.0)});
    }
    if (has_normal) {
      cloud.normals->push_back({static_cast<float>(values[inx]), static_cast<float>(values[iny]),
                                static_cast<float>(values[inz])});
    }
  }

  // Data of trailing elements (faces etc.) is skipped, but must be present.
  std::size_t trailing = 0;
  for (std::size_t e = 1; e < elements.size(); ++e) trailing += elements[e].count;
  std::size_t seen = 0;
  while (next_line()) {
    if (split_ws(line).empty()) continue;
    if (++seen > trailing) throw ParseError(line_no, "element count mismatch: extra data");
  }
  if (seen < trailing) throw ParseError(line_no, "element count mismatch: truncated data");
  if (cloud.size() == 0) throw ParseError(line_no, "no vertices");
  return cloud;
}

PointCloud load_ply_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  PointCloud cloud = load_ply(ss.str());
  cloud.id = path;
  return cloud;
}

std::string save_ply(const PointCloud& cloud) {
  std::string out;
  out += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) + "\n";
  out += "property float x\nproperty float y\nproperty float z\n";
  if (cloud.colors) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "end_header\n";
  char buf[128];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.positions[i];
    int len = std::snprintf(buf, sizeof buf, "%.6g %.6g %.6g", p[0], p[1], p[2]);
    out.append(buf, static_cast<std::size_t>(len));
    if (cloud.colors) {
      const auto& c = (*cloud.colors)[i];
      auto to_byte = [](float v) {
        return static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      };
      len = std::snprintf(buf, sizeof buf, " %d %d %d", to_byte(c[0]), to_byte(c[1]), to_byte(c[2]));
      out.append(buf, static_cast<std::size_t>(len));
    }
    out += '\n';
  }
  return out;
}

void save_ply_file(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << save_ply(cloud);
}

}  // namespace pcal
