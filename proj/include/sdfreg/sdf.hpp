#pragma once

// Signed distance field models: analytic primitives, compound unions, and a
// trilinear voxel grid. Every model exposes value and spatial gradient; the
// registration Jacobian consumes the gradient directly, so gradients at
// singular loci use a fixed tie-break instead of failing.

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sdfreg/pointcloud.hpp"
#include "sdfreg/rng.hpp"

namespace sdfreg {

class SdfModel {
 public:
  virtual ~SdfModel() = default;

  virtual double value(const Eigen::Vector3d& x) const = 0;
  virtual Eigen::Vector3d gradient(const Eigen::Vector3d& x) const = 0;

  /// Batched evaluation; overridden where a vectorized path exists.
  virtual void values(std::span<const Eigen::Vector3d> xs, Eigen::VectorXd& out) const {
    out.resize(static_cast<Eigen::Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) out[static_cast<Eigen::Index>(i)] = value(xs[i]);
  }
  virtual void gradients(std::span<const Eigen::Vector3d> xs,
                         std::vector<Eigen::Vector3d>& out) const {
    out.resize(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = gradient(xs[i]);
  }
};

/// Analytic primitives additionally know their surface area and how to draw
/// area-uniform surface samples; both are needed by sample_surface.
class AnalyticSdf : public SdfModel {
 public:
  virtual double surface_area() const = 0;
  virtual Eigen::Vector3d sample_point(std::mt19937_64& rng) const = 0;
};

class SphereSdf final : public AnalyticSdf {
 public:
  SphereSdf(const Eigen::Vector3d& center, double radius)
      : center_(center), radius_(radius) {
    if (!(radius > 0.0)) throw std::invalid_argument("sphere radius must be > 0");
  }

  double value(const Eigen::Vector3d& x) const override {
    return (x - center_).norm() - radius_;
  }

  Eigen::Vector3d gradient(const Eigen::Vector3d& x) const override {
    Eigen::Vector3d d = x - center_;
    double n = d.norm();
    if (n < 1e-12) return Eigen::Vector3d::UnitX();  // fixed subgradient at the center
    return d / n;
  }

  double surface_area() const override { return 4.0 * M_PI * radius_ * radius_; }

  Eigen::Vector3d sample_point(std::mt19937_64& rng) const override {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double z = 2.0 * unit(rng) - 1.0;
    double a = 2.0 * M_PI * unit(rng);
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return center_ + radius_ * Eigen::Vector3d(r * std::cos(a), r * std::sin(a), z);
  }

  const Eigen::Vector3d& center() const { return center_; }
  double radius() const { return radius_; }

 private:
  Eigen::Vector3d center_;
  double radius_;
};

/// Exact box distance: negative inside (max component of the offset), not
/// the outside-only approximation, so interior residuals are usable.
class BoxSdf final : public AnalyticSdf {
 public:
  BoxSdf(const Eigen::Vector3d& center, const Eigen::Vector3d& half_extents)
      : center_(center), half_(half_extents) {
    if (!(half_extents.minCoeff() > 0.0))
      throw std::invalid_argument("box half extents must be > 0 componentwise");
  }

  double value(const Eigen::Vector3d& x) const override {
    Eigen::Vector3d q = (x - center_).cwiseAbs() - half_;
    double outside = q.cwiseMax(0.0).norm();
    double inside = std::min(q.maxCoeff(), 0.0);
    return outside + inside;
  }

  Eigen::Vector3d gradient(const Eigen::Vector3d& x) const override {
    Eigen::Vector3d d = x - center_;
    Eigen::Vector3d s;
    for (int k = 0; k < 3; ++k) s[k] = d[k] < 0.0 ? -1.0 : 1.0;  // sign(0) := +1
    Eigen::Vector3d q = d.cwiseAbs() - half_;
    Eigen::Vector3d qpos = q.cwiseMax(0.0);
    double outside = qpos.norm();
    if (outside > 0.0) return s.cwiseProduct(qpos) / outside;
    // Interior: steepest ascent along the axis closest to a face,
    // first axis on ties.
    int axis = 0;
    for (int k = 1; k < 3; ++k)
      if (q[k] > q[axis]) axis = k;
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    g[axis] = s[axis];
    return g;
  }

  double surface_area() const override {
    return 8.0 * (half_.x() * half_.y() + half_.y() * half_.z() + half_.z() * half_.x());
  }

  Eigen::Vector3d sample_point(std::mt19937_64& rng) const override {
    // Face-area-weighted: faces ordered +x,-x,+y,-y,+z,-z.
    double ax = 4.0 * half_.y() * half_.z();
    double ay = 4.0 * half_.x() * half_.z();
    double az = 4.0 * half_.x() * half_.y();
    double total = 2.0 * (ax + ay + az);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double pick = unit(rng) * total;
    double u = 2.0 * unit(rng) - 1.0;
    double v = 2.0 * unit(rng) - 1.0;
    int face;
    if (pick < 2.0 * ax)
      face = pick < ax ? 0 : 1;
    else if (pick < 2.0 * ax + 2.0 * ay)
      face = pick < 2.0 * ax + ay ? 2 : 3;
    else
      face = pick < 2.0 * ax + 2.0 * ay + az ? 4 : 5;
    Eigen::Vector3d p;
    switch (face) {
      case 0: p = {half_.x(), u * half_.y(), v * half_.z()}; break;
      case 1: p = {-half_.x(), u * half_.y(), v * half_.z()}; break;
      case 2: p = {u * half_.x(), half_.y(), v * half_.z()}; break;
      case 3: p = {u * half_.x(), -half_.y(), v * half_.z()}; break;
      case 4: p = {u * half_.x(), v * half_.y(), half_.z()}; break;
      default: p = {u * half_.x(), v * half_.y(), -half_.z()}; break;
    }
    return center_ + p;
  }

 private:
  Eigen::Vector3d center_;
  Eigen::Vector3d half_;
};

/// Torus around the z axis through `center`.
class TorusSdf final : public AnalyticSdf {
 public:
  TorusSdf(const Eigen::Vector3d& center, double major_r, double minor_r)
      : center_(center), major_(major_r), minor_(minor_r) {
    if (!(major_r > minor_r && minor_r > 0.0))
      throw std::invalid_argument("torus requires major_r > minor_r > 0");
  }

  double value(const Eigen::Vector3d& x) const override {
    Eigen::Vector3d d = x - center_;
    double ring = std::hypot(d.x(), d.y()) - major_;
    return std::hypot(ring, d.z()) - minor_;
  }

  Eigen::Vector3d gradient(const Eigen::Vector3d& x) const override {
    Eigen::Vector3d d = x - center_;
    double rxy = std::hypot(d.x(), d.y());
    double ring = rxy - major_;
    double q = std::hypot(ring, d.z());
    if (q < 1e-12) return Eigen::Vector3d::UnitZ();  // on the core circle
    Eigen::Vector3d g;
    if (rxy < 1e-12) {
      g.head<2>().setZero();  // on the axis: ring direction undefined, d/dz survives
    } else {
      g.x() = (ring / q) * (d.x() / rxy);
      g.y() = (ring / q) * (d.y() / rxy);
    }
    g.z() = d.z() / q;
    return g;
  }

  double surface_area() const override { return 4.0 * M_PI * M_PI * major_ * minor_; }

  Eigen::Vector3d sample_point(std::mt19937_64& rng) const override {
    // Poloidal angle v has density (major + minor*cos v); sample it by
    // rejection against the envelope (major + minor), which is exact.
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double u = 2.0 * M_PI * unit(rng);
    double v;
    for (;;) {
      v = 2.0 * M_PI * unit(rng);
      if (unit(rng) * (major_ + minor_) <= major_ + minor_ * std::cos(v)) break;
    }
    double ring = major_ + minor_ * std::cos(v);
    return center_ + Eigen::Vector3d(ring * std::cos(u), ring * std::sin(u),
                                     minor_ * std::sin(v));
  }

 private:
  Eigen::Vector3d center_;
  double major_;
  double minor_;
};

/// Half-space boundary: sdf(x) = dot(normal, x) - offset. Surface samples are
/// drawn from the square patch of half-extent 1 around the point closest to
/// the origin, and surface_area reports that patch.
class PlaneSdf final : public AnalyticSdf {
 public:
  static constexpr double kPatchHalfExtent = 1.0;

  PlaneSdf(const Eigen::Vector3d& normal, double offset)
      : normal_(normal), offset_(offset) {
    if (std::abs(normal.norm() - 1.0) > 1e-9)
      throw std::invalid_argument("plane normal must be unit length");
  }

  double value(const Eigen::Vector3d& x) const override { return normal_.dot(x) - offset_; }

  Eigen::Vector3d gradient(const Eigen::Vector3d&) const override { return normal_; }

  double surface_area() const override {
    return 4.0 * kPatchHalfExtent * kPatchHalfExtent;
  }

  Eigen::Vector3d sample_point(std::mt19937_64& rng) const override {
    Eigen::Vector3d u = normal_.unitOrthogonal();
    Eigen::Vector3d v = normal_.cross(u);
    std::uniform_real_distribution<double> span(-kPatchHalfExtent, kPatchHalfExtent);
    double a = span(rng);
    double b = span(rng);
    return offset_ * normal_ + a * u + b * v;
  }

 private:
  Eigen::Vector3d normal_;
  double offset_;
};

/// min() over children; gradient ties resolve to the first child in list
/// order so solver traces stay reproducible.
class UnionSdf final : public SdfModel {
 public:
  explicit UnionSdf(std::vector<std::shared_ptr<const SdfModel>> children)
      : children_(std::move(children)) {
    if (children_.empty()) throw std::invalid_argument("union needs at least one child");
  }

  double value(const Eigen::Vector3d& x) const override {
    double best = children_.front()->value(x);
    for (std::size_t i = 1; i < children_.size(); ++i)
      best = std::min(best, children_[i]->value(x));
    return best;
  }

  Eigen::Vector3d gradient(const Eigen::Vector3d& x) const override {
    std::size_t winner = 0;
    double best = children_.front()->value(x);
    for (std::size_t i = 1; i < children_.size(); ++i) {
      double v = children_[i]->value(x);
      if (v < best) {
        best = v;
        winner = i;
      }
    }
    return children_[winner]->gradient(x);
  }

  const std::vector<std::shared_ptr<const SdfModel>>& children() const { return children_; }

 private:
  std::vector<std::shared_ptr<const SdfModel>> children_;
};

/// Dense signed-distance lattice with trilinear interpolation. Queries must
/// stay inside the grid bounds; extrapolation would feed garbage steps to the
/// solver, so out-of-bounds is an error.
class GridSdf final : public SdfModel {
 public:
  GridSdf(const Eigen::Vector3d& origin, double cell_size,
          const std::array<std::uint32_t, 3>& dims, std::vector<double> values)
      : origin_(origin), cell_(cell_size), dims_(dims), values_(std::move(values)) {
    if (!(cell_size > 0.0)) throw std::invalid_argument("grid cell_size must be > 0");
    for (int k = 0; k < 3; ++k)
      if (dims_[k] < 2) throw std::invalid_argument("grid dims must be >= 2 on every axis");
    std::size_t expected =
        static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
    if (values_.size() != expected)
      throw std::invalid_argument("grid values length does not match dims");
    for (double v : values_)
      if (!std::isfinite(v)) throw std::invalid_argument("grid values must be finite");
  }

  double value(const Eigen::Vector3d& x) const override {
    Cell c = locate(x);
    double v = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
      int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
      double w = (dx ? c.f.x() : 1.0 - c.f.x()) * (dy ? c.f.y() : 1.0 - c.f.y()) *
                 (dz ? c.f.z() : 1.0 - c.f.z());
      v += w * node(c.i.x() + dx, c.i.y() + dy, c.i.z() + dz);
    }
    return v;
  }

  /// Analytic gradient of the trilinear interpolant (constant per cell in
  /// each derivative's own axis, bilinear in the others).
  Eigen::Vector3d gradient(const Eigen::Vector3d& x) const override {
    Cell c = locate(x);
    auto corner_val = [&](int dx, int dy, int dz) {
      return node(c.i.x() + dx, c.i.y() + dy, c.i.z() + dz);
    };
    double fx = c.f.x(), fy = c.f.y(), fz = c.f.z();
    Eigen::Vector3d g;
    g.x() = (1 - fy) * (1 - fz) * (corner_val(1, 0, 0) - corner_val(0, 0, 0)) +
            fy * (1 - fz) * (corner_val(1, 1, 0) - corner_val(0, 1, 0)) +
            (1 - fy) * fz * (corner_val(1, 0, 1) - corner_val(0, 0, 1)) +
            fy * fz * (corner_val(1, 1, 1) - corner_val(0, 1, 1));
    g.y() = (1 - fx) * (1 - fz) * (corner_val(0, 1, 0) - corner_val(0, 0, 0)) +
            fx * (1 - fz) * (corner_val(1, 1, 0) - corner_val(1, 0, 0)) +
            (1 - fx) * fz * (corner_val(0, 1, 1) - corner_val(0, 0, 1)) +
            fx * fz * (corner_val(1, 1, 1) - corner_val(1, 0, 1));
    g.z() = (1 - fx) * (1 - fy) * (corner_val(0, 0, 1) - corner_val(0, 0, 0)) +
            fx * (1 - fy) * (corner_val(1, 0, 1) - corner_val(1, 0, 0)) +
            (1 - fx) * fy * (corner_val(0, 1, 1) - corner_val(0, 1, 0)) +
            fx * fy * (corner_val(1, 1, 1) - corner_val(1, 1, 0));
    return g / cell_;
  }

  const Eigen::Vector3d& origin() const { return origin_; }
  double cell_size() const { return cell_; }
  const std::array<std::uint32_t, 3>& dims() const { return dims_; }
  const std::vector<double>& node_values() const { return values_; }

  Eigen::Vector3d node_position(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz) const {
    return origin_ + cell_ * Eigen::Vector3d(ix, iy, iz);
  }

 private:
  struct Cell {
    Eigen::Vector3i i;
    Eigen::Vector3d f;
  };

  Cell locate(const Eigen::Vector3d& x) const {
    Cell c;
    for (int k = 0; k < 3; ++k) {
      double u = (x[k] - origin_[k]) / cell_;
      double hi = static_cast<double>(dims_[k] - 1);
      // Tolerate boundary round-off at 1e-9 cells, nothing more.
      if (u < -1e-9 || u > hi + 1e-9)
        throw std::domain_error("grid query out of bounds on axis " + std::to_string(k) +
                                ": coordinate " + std::to_string(x[k]));
      u = std::clamp(u, 0.0, hi);
      int i = std::min(static_cast<int>(u), static_cast<int>(dims_[k]) - 2);
      c.i[k] = i;
      c.f[k] = u - i;
    }
    return c;
  }

  double node(int ix, int iy, int iz) const {
    return values_[static_cast<std::size_t>(ix) +
                   dims_[0] * (static_cast<std::size_t>(iy) + dims_[1] * static_cast<std::size_t>(iz))];
  }

  Eigen::Vector3d origin_;
  double cell_;
  std::array<std::uint32_t, 3> dims_;
  std::vector<double> values_;
};

/// Draws n points with |sdf| < 1e-6 from an analytic model, deterministic per
/// seed. Unions weight children by surface area and reject samples interior
/// to a sibling; rejection gives up after 1000*n attempts.
inline PointCloud sample_surface(const SdfModel& model, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample_surface: n must be >= 1");
  auto rng = make_rng(seed);
  PointCloud cloud;
  cloud.points.reserve(n);

  if (const auto* analytic = dynamic_cast<const AnalyticSdf*>(&model)) {
    for (std::size_t i = 0; i < n; ++i) cloud.points.push_back(analytic->sample_point(rng));
    return cloud;
  }

  const auto* u = dynamic_cast<const UnionSdf*>(&model);
  if (u == nullptr)
    throw std::invalid_argument("sample_surface requires an analytic model or a union of them");

  std::vector<const AnalyticSdf*> children;
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& child : u->children()) {
    const auto* a = dynamic_cast<const AnalyticSdf*>(child.get());
    if (a == nullptr)
      throw std::invalid_argument("sample_surface: union children must be analytic");
    children.push_back(a);
    total += a->surface_area();
    cumulative.push_back(total);
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t attempts = 0;
  const std::size_t max_attempts = 1000 * n;
  while (cloud.points.size() < n) {
    if (++attempts > max_attempts)
      throw std::runtime_error("sample_surface: rejection sampling failed after " +
                               std::to_string(max_attempts) + " attempts");
    double pick = unit(rng) * total;
    std::size_t idx =
        std::lower_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin();
    if (idx >= children.size()) idx = children.size() - 1;
    Eigen::Vector3d p = children[idx]->sample_point(rng);
    if (u->value(p) < -1e-9) continue;  // interior to a sibling
    cloud.points.push_back(p);
  }
  return cloud;
}

inline GridSdf bake_grid(const SdfModel& model, const Eigen::Vector3d& origin,
                         double cell_size, const std::array<std::uint32_t, 3>& dims) {
  for (int k = 0; k < 3; ++k)
    if (dims[k] < 2) throw std::invalid_argument("bake_grid: dims must be >= 2 on every axis");
  std::vector<double> values(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
  std::size_t idx = 0;
  for (std::uint32_t iz = 0; iz < dims[2]; ++iz)
    for (std::uint32_t iy = 0; iy < dims[1]; ++iy)
      for (std::uint32_t ix = 0; ix < dims[0]; ++ix)
        values[idx++] = model.value(origin + cell_size * Eigen::Vector3d(ix, iy, iz));
  return GridSdf(origin, cell_size, dims, std::move(values));
}

// --- SDFG binary format -----------------------------------------------------
// little-endian: magic "SDFG", u32 version=1, 3x u32 dims, 3x f64 origin,
// f64 cell_size, f64 node values x-fastest.

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in, const std::string& what) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated file while reading " + what);
  return v;
}

}  // namespace detail

inline void write_grid_sdf(const std::string& path, const GridSdf& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.write("SDFG", 4);
  detail::write_raw<std::uint32_t>(out, 1);
  for (int k = 0; k < 3; ++k) detail::write_raw<std::uint32_t>(out, grid.dims()[k]);
  for (int k = 0; k < 3; ++k) detail::write_raw<double>(out, grid.origin()[k]);
  detail::write_raw<double>(out, grid.cell_size());
  for (double v : grid.node_values()) detail::write_raw<double>(out, v);
}

inline GridSdf read_grid_sdf(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open grid file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "SDFG")
    throw std::runtime_error(path + ": not an SDFG file (bad magic)");
  auto version = detail::read_raw<std::uint32_t>(in, "version");
  if (version != 1)
    throw std::runtime_error(path + ": unsupported SDFG version " + std::to_string(version));
  std::array<std::uint32_t, 3> dims;
  for (int k = 0; k < 3; ++k) dims[k] = detail::read_raw<std::uint32_t>(in, "dims");
  Eigen::Vector3d origin;
  for (int k = 0; k < 3; ++k) origin[k] = detail::read_raw<double>(in, "origin");
  double cell = detail::read_raw<double>(in, "cell_size");
  std::size_t count = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = detail::read_raw<double>(in, "node values");
  return GridSdf(origin, cell, dims, std::move(values));
}

}  // namespace sdfreg
