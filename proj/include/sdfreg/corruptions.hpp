#pragma once

// Seeded corruption protocols for benchmark trials: random pose perturbation,
// per-coordinate Gaussian noise, half-space partial crop, and random
// decimation. Every operation is deterministic per seed and preserves the
// relative order of surviving points.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "sdfreg/pointcloud.hpp"
#include "sdfreg/rng.hpp"
#include "sdfreg/se3.hpp"

namespace sdfreg {

struct PerturbationSpec {
  double rot_range_deg = 45.0;        // per-axis upper bound, sampled in [0, bound]
  double trans_range = 0.5;           // symmetric bound, sampled in [-bound, bound]
  double noise_sigma = 0.0;
  double partial_keep_fraction = 1.0;
  double density_keep_fraction = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (rot_range_deg < 0.0 || trans_range < 0.0)
      throw std::invalid_argument("perturbation ranges must be non-negative");
    if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
    if (!(partial_keep_fraction > 0.0) || partial_keep_fraction > 1.0)
      throw std::invalid_argument("partial_keep_fraction must be in (0,1]");
    if (!(density_keep_fraction > 0.0) || density_keep_fraction > 1.0)
      throw std::invalid_argument("density_keep_fraction must be in (0,1]");
  }
};

/// R = Rz(c)*Ry(b)*Rx(a) with a,b,c ~ U[0, rot_range_deg] (XYZ intrinsic
/// order), t ~ U[-trans_range, trans_range]^3. Draw order is fixed:
/// a, b, c, tx, ty, tz.
inline RigidTransform random_pose(const PerturbationSpec& spec, std::uint64_t seed) {
  spec.validate();
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> rot(0.0, spec.rot_range_deg * M_PI / 180.0);
  double a = spec.rot_range_deg > 0.0 ? rot(rng) : 0.0;
  double b = spec.rot_range_deg > 0.0 ? rot(rng) : 0.0;
  double c = spec.rot_range_deg > 0.0 ? rot(rng) : 0.0;
  RigidTransform T;
  T.rotation = (Eigen::AngleAxisd(c, Eigen::Vector3d::UnitZ()) *
                Eigen::AngleAxisd(b, Eigen::Vector3d::UnitY()) *
                Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()))
                   .toRotationMatrix();
  std::uniform_real_distribution<double> trans(-spec.trans_range, spec.trans_range);
  for (int k = 0; k < 3; ++k)
    T.translation[k] = spec.trans_range > 0.0 ? trans(rng) : 0.0;
  return T;
}

/// i.i.d. N(0, sigma^2) offset per coordinate, drawn point-major x,y,z.
inline PointCloud add_noise(const PointCloud& cloud, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("add_noise: sigma must be >= 0");
  if (sigma == 0.0) return cloud;
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  PointCloud out = cloud;
  for (auto& p : out.points)
    for (int k = 0; k < 3; ++k) p[k] += gauss(rng);
  return out;
}

namespace detail {

inline std::size_t keep_count(double keep_fraction, std::size_t n) {
  if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
    throw std::invalid_argument("keep_fraction must be in (0,1]");
  auto k = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(n)));
  return std::min(std::max<std::size_t>(k, 1), n);
}

inline Eigen::Vector3d random_unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (;;) {
    Eigen::Vector3d v(gauss(rng), gauss(rng), gauss(rng));
    double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

}  // namespace detail

/// Keeps the ceil(keep_fraction*N) points with the largest signed projection
/// onto a random plane normal -- the plane slides along its normal until
/// exactly that many points remain on one side.
inline PointCloud crop_partial(const PointCloud& cloud, double keep_fraction,
                               std::uint64_t seed) {
  std::size_t n = cloud.size();
  std::size_t k = detail::keep_count(keep_fraction, n);
  if (k == n) return cloud;
  auto rng = make_rng(seed);
  Eigen::Vector3d normal = detail::random_unit_vector(rng);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cloud.points[a].dot(normal) > cloud.points[b].dot(normal);
  });
  order.resize(k);
  std::sort(order.begin(), order.end());

  PointCloud out;
  out.name = cloud.name;
  out.points.reserve(k);
  for (std::size_t i : order) out.points.push_back(cloud.points[i]);
  return out;
}

/// Uniform random subset without replacement of size ceil(keep_fraction*N),
/// order-preserving.
inline PointCloud decimate(const PointCloud& cloud, double keep_fraction,
                           std::uint64_t seed) {
  std::size_t n = cloud.size();
  std::size_t k = detail::keep_count(keep_fraction, n);
  if (k == n) return cloud;
  auto rng = make_rng(seed);

  // Partial Fisher-Yates over the index array.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());

  PointCloud out;
  out.name = cloud.name;
  out.points.reserve(k);
  for (std::size_t i : idx) out.points.push_back(cloud.points[i]);
  return out;
}

}  // namespace sdfreg
