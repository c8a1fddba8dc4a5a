#pragma once

// JSON scene descriptions for analytic SDFs, plus magic-byte dispatch so one
// path argument can name a scene (JSON), a baked grid (SDFG), or a trained
// network (SDFN).

#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdfreg/mlp.hpp"
#include "sdfreg/sdf.hpp"

namespace sdfreg {

namespace detail {

inline double scene_number(const nlohmann::json& j, const std::string& type,
                           const std::string& key) {
  if (!j.contains(key) || !j[key].is_number())
    throw std::invalid_argument("scene " + type + ": missing numeric field '" + key + "'");
  return j[key].get<double>();
}

inline Eigen::Vector3d scene_vec3(const nlohmann::json& j, const std::string& type,
                                  const std::string& key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != 3)
    throw std::invalid_argument("scene " + type + ": field '" + key +
                                "' must be an array of 3 numbers");
  const auto& arr = j[key];
  for (const auto& v : arr)
    if (!v.is_number())
      throw std::invalid_argument("scene " + type + ": field '" + key +
                                  "' must be an array of 3 numbers");
  return {arr[0].get<double>(), arr[1].get<double>(), arr[2].get<double>()};
}

}  // namespace detail

/// Builds an SDF model from a scene node:
/// {"type":"sphere","center":[...],"radius":r}
/// {"type":"box","center":[...],"half_extents":[...]}
/// {"type":"torus","center":[...],"major_radius":R,"minor_radius":r}
/// {"type":"plane","normal":[...],"offset":d}
/// {"type":"union","children":[nodes...]}
inline std::shared_ptr<const SdfModel> parse_scene(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
    throw std::invalid_argument("scene: every node needs a string 'type'");
  const std::string type = j["type"].get<std::string>();
  if (type == "sphere")
    return std::make_shared<SphereSdf>(detail::scene_vec3(j, type, "center"),
                                       detail::scene_number(j, type, "radius"));
  if (type == "box")
    return std::make_shared<BoxSdf>(detail::scene_vec3(j, type, "center"),
                                    detail::scene_vec3(j, type, "half_extents"));
  if (type == "torus")
    return std::make_shared<TorusSdf>(detail::scene_vec3(j, type, "center"),
                                      detail::scene_number(j, type, "major_radius"),
                                      detail::scene_number(j, type, "minor_radius"));
  if (type == "plane")
    return std::make_shared<PlaneSdf>(detail::scene_vec3(j, type, "normal"),
                                      detail::scene_number(j, type, "offset"));
  if (type == "union") {
    if (!j.contains("children") || !j["children"].is_array() || j["children"].empty())
      throw std::invalid_argument("scene union: needs a non-empty 'children' array");
    std::vector<std::shared_ptr<const SdfModel>> children;
    for (const auto& child : j["children"]) children.push_back(parse_scene(child));
    return std::make_shared<UnionSdf>(std::move(children));
  }
  throw std::invalid_argument("scene: unknown type '" + type + "'");
}

inline std::shared_ptr<const SdfModel> load_scene_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  return parse_scene(j);
}

/// Loads any supported SDF representation, dispatching on the 4-byte magic:
/// SDFG grids, SDFN networks, anything else is parsed as a JSON scene.
inline std::shared_ptr<const SdfModel> load_sdf_any(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("cannot open SDF file: " + path);
  char magic[4] = {0, 0, 0, 0};
  probe.read(magic, 4);
  const std::string tag(magic, static_cast<std::size_t>(probe.gcount()));
  probe.close();
  if (tag == "SDFG") return std::make_shared<GridSdf>(read_grid_sdf(path));
  if (tag == "SDFN") return std::make_shared<NeuralSdfModel>(read_mlp(path));
  return load_scene_file(path);
}

}  // namespace sdfreg
