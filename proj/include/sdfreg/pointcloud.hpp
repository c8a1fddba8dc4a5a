#pragma once

// Point cloud container and text file I/O (xyz, ascii ply). Coordinates are
// printed with 17 significant digits so write/read round-trips are bit-exact.

#include <Eigen/Core>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdfreg {

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::string name;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  const Eigen::Vector3d& operator[](std::size_t i) const { return points[i]; }
  Eigen::Vector3d& operator[](std::size_t i) { return points[i]; }
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class CloudFormat { Xyz, PlyAscii };

namespace detail {

inline std::string format_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline bool parse_three_doubles(const std::string& text, Eigen::Vector3d& out) {
  const char* s = text.c_str();
  char* end = nullptr;
  for (int k = 0; k < 3; ++k) {
    out[k] = std::strtod(s, &end);
    if (end == s) return false;
    s = end;
  }
  while (*s != '\0') {
    if (!std::isspace(static_cast<unsigned char>(*s))) return false;
    ++s;
  }
  return out.allFinite();
}

}  // namespace detail

/// Parses whitespace-separated "x y z" lines; '#' starts a comment; blank
/// lines are skipped.
inline PointCloud read_cloud_xyz(std::istream& in, const std::string& path) {
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    bool blank = true;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
    if (blank) continue;
    Eigen::Vector3d p;
    if (!detail::parse_three_doubles(line, p))
      throw ParseError(path, lineno, "expected three finite coordinates");
    cloud.points.push_back(p);
  }
  return cloud;
}

/// Parses "format ascii 1.0" PLY with a vertex element carrying exactly
/// float/double x y z properties.
inline PointCloud read_cloud_ply(std::istream& in, const std::string& path) {
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next_line() || line != "ply") throw ParseError(path, lineno ? lineno : 1, "missing 'ply' magic");
  if (!next_line() || line != "format ascii 1.0")
    throw ParseError(path, lineno ? lineno : 2, "only 'format ascii 1.0' is supported");

  std::size_t vertex_count = 0;
  bool seen_vertex_element = false;
  std::vector<std::string> vertex_props;
  bool in_vertex_element = false;
  while (true) {
    if (!next_line()) throw ParseError(path, lineno, "unexpected end of header");
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment") continue;
    if (tok == "element") {
      std::string name;
      long long count = -1;
      ls >> name >> count;
      if (name == "vertex") {
        if (count < 0) throw ParseError(path, lineno, "bad vertex count");
        vertex_count = static_cast<std::size_t>(count);
        seen_vertex_element = true;
        in_vertex_element = true;
      } else {
        in_vertex_element = false;
        if (count != 0) throw ParseError(path, lineno, "unsupported element '" + name + "'");
      }
    } else if (tok == "property") {
      if (!in_vertex_element) throw ParseError(path, lineno, "property outside vertex element");
      std::string type, name;
      ls >> type >> name;
      if (type != "float" && type != "double" && type != "float32" && type != "float64")
        throw ParseError(path, lineno, "unsupported property type '" + type + "'");
      vertex_props.push_back(name);
    } else {
      throw ParseError(path, lineno, "unrecognized header line");
    }
  }
  if (!seen_vertex_element) throw ParseError(path, lineno, "no vertex element");
  if (vertex_props != std::vector<std::string>{"x", "y", "z"})
    throw ParseError(path, lineno, "vertex element must have exactly properties x y z");

  PointCloud cloud;
  cloud.points.reserve(vertex_count);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    if (!next_line())
      throw ParseError(path, lineno, "vertex count mismatch: expected " +
                                         std::to_string(vertex_count) + ", got " +
                                         std::to_string(i));
    Eigen::Vector3d p;
    if (!detail::parse_three_doubles(line, p))
      throw ParseError(path, lineno, "expected three finite coordinates");
    cloud.points.push_back(p);
  }
  return cloud;
}

inline PointCloud read_cloud(const std::string& path, CloudFormat format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open point cloud file: " + path);
  PointCloud cloud = format == CloudFormat::Xyz ? read_cloud_xyz(in, path)
                                                : read_cloud_ply(in, path);
  cloud.name = path;
  return cloud;
}

/// Picks the format from the file extension (.ply -> ascii ply, else xyz).
inline PointCloud read_cloud(const std::string& path) {
  bool ply = path.size() >= 4 && path.substr(path.size() - 4) == ".ply";
  return read_cloud(path, ply ? CloudFormat::PlyAscii : CloudFormat::Xyz);
}

inline void write_cloud_xyz(std::ostream& out, const PointCloud& cloud) {
  for (const auto& p : cloud.points)
    out << detail::format_coord(p.x()) << ' ' << detail::format_coord(p.y())
        << ' ' << detail::format_coord(p.z()) << '\n';
}

inline void write_cloud_ply(std::ostream& out, const PointCloud& cloud) {
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.points.size()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  write_cloud_xyz(out, cloud);
}

inline void write_cloud(const std::string& path, const PointCloud& cloud,
                        CloudFormat format) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  if (format == CloudFormat::Xyz)
    write_cloud_xyz(out, cloud);
  else
    write_cloud_ply(out, cloud);
}

inline void write_cloud(const std::string& path, const PointCloud& cloud) {
  bool ply = path.size() >= 4 && path.substr(path.size() - 4) == ".ply";
  write_cloud(path, cloud, ply ? CloudFormat::PlyAscii : CloudFormat::Xyz);
}

/// Uniform scale + offset mapping a cloud into [0,1]^3; keeps enough to undo.
struct UnitBoxRecord {
  double scale = 1.0;              // 1 / longest bounding-box extent
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();  // original bbox minimum

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return (p - offset) * scale; }
  Eigen::Vector3d undo(const Eigen::Vector3d& p) const { return p / scale + offset; }
};

inline std::pair<PointCloud, UnitBoxRecord> normalize_unit_box(const PointCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("normalize_unit_box: empty cloud");
  Eigen::Vector3d lo = cloud.points.front(), hi = cloud.points.front();
  for (const auto& p : cloud.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  double extent = (hi - lo).maxCoeff();
  if (!(extent > 0.0))
    throw std::invalid_argument("normalize_unit_box: degenerate bounding box (all points coincident)");
  UnitBoxRecord rec;
  rec.scale = 1.0 / extent;
  rec.offset = lo;
  PointCloud out;
  out.name = cloud.name;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(rec.apply(p));
  return {std::move(out), rec};
}

}  // namespace sdfreg
