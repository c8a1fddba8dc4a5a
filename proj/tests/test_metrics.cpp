#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <random>

#include "sdfreg/metrics.hpp"
#include "sdfreg/rng.hpp"
#include "sdfreg/se3.hpp"

using namespace sdfreg;
using Eigen::Vector3d;

namespace {

Matrix3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
  while (q.norm() < 1e-6) q = Eigen::Quaterniond(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
  q.normalize();
  return q.toRotationMatrix();
}

// Quaternion half-angle form of the geodesic distance, independent of the
// trace formula under test.
double quaternion_angle_deg(const Matrix3& A, const Matrix3& B) {
  Eigen::Quaterniond qa(A), qb(B);
  double d = std::min(1.0, std::abs(qa.dot(qb)));
  return 2.0 * std::acos(d) * 180.0 / M_PI;
}

}  // namespace

TEST_CASE("rotation error on hand-built rotations") {
  Matrix3 I = Matrix3::Identity();
  Matrix3 Rz90 = Eigen::AngleAxisd(M_PI / 2, Vector3d::UnitZ()).toRotationMatrix();
  CHECK(rotation_error_deg(I, I) == Catch::Approx(0.0).margin(1e-12));
  CHECK(rotation_error_deg(I, Rz90) == Catch::Approx(90.0));
  CHECK(rotation_error_deg(Rz90, I) == Catch::Approx(90.0));
  Matrix3 Rx180 = Eigen::AngleAxisd(M_PI, Vector3d::UnitX()).toRotationMatrix();
  CHECK(rotation_error_deg(I, Rx180) == Catch::Approx(180.0));
}

TEST_CASE("rotation error matches the quaternion oracle") {
  auto rng = make_rng(21);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    Matrix3 A = random_rotation(rng);
    Matrix3 B = random_rotation(rng);
    worst = std::max(worst,
                     std::abs(rotation_error_deg(A, B) - quaternion_angle_deg(A, B)));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("rotation error is symmetric and bi-invariant") {
  auto rng = make_rng(22);
  for (int i = 0; i < 200; ++i) {
    Matrix3 A = random_rotation(rng);
    Matrix3 B = random_rotation(rng);
    Matrix3 C = random_rotation(rng);
    double e = rotation_error_deg(A, B);
    CHECK(rotation_error_deg(B, A) == Catch::Approx(e).margin(1e-9));
    CHECK(rotation_error_deg(C * A, C * B) == Catch::Approx(e).margin(1e-9));
    CHECK(rotation_error_deg(A * C, B * C) == Catch::Approx(e).margin(1e-9));
    CHECK(e >= 0.0);
    CHECK(e <= 180.0 + 1e-12);
  }
}

TEST_CASE("translation error is the euclidean distance") {
  CHECK(translation_error(Vector3d(0, 0, 0), Vector3d(3, 4, 0)) == Catch::Approx(5.0));
  CHECK(translation_error(Vector3d(1, 1, 1), Vector3d(1, 1, 1)) == 0.0);
}

TEST_CASE("summary statistics on hand cases") {
  std::vector<TrialReport> trials(2);
  trials[0].rot_error_deg = 1.0;
  trials[0].trans_error = 0.001;
  trials[1].rot_error_deg = 3.0;
  trials[1].trans_error = 0.003;
  BatchSummary s = summarize(trials, 5.0, 0.05);
  CHECK(s.rotation_deg.mae == Catch::Approx(2.0));
  CHECK(s.rotation_deg.rmse == Catch::Approx(std::sqrt(5.0)));
  CHECK(s.rotation_deg.median == Catch::Approx(2.0));
  CHECK(s.translation.mae == Catch::Approx(0.002));
  CHECK(s.count == 2);
  CHECK(s.success_rate == 1.0);
  CHECK(s.rot_thresh_deg == 5.0);

  trials.push_back(trials[1]);
  trials[2].rot_error_deg = 10.0;  // fails the rotation threshold
  BatchSummary s3 = summarize(trials, 5.0, 0.05);
  CHECK(s3.success_rate == Catch::Approx(2.0 / 3.0));
  CHECK(s3.rotation_deg.median == Catch::Approx(3.0));
  CHECK_THROWS_AS(summarize({}, 5.0, 0.05), std::invalid_argument);
}

TEST_CASE("rmse dominates mae on random summaries") {
  auto rng = make_rng(23);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<TrialReport> trials(7);
    for (auto& t : trials) {
      t.rot_error_deg = u(rng);
      t.trans_error = u(rng) * 0.01;
    }
    BatchSummary s = summarize(trials, 5.0, 0.05);
    CHECK(s.rotation_deg.rmse >= s.rotation_deg.mae - 1e-12);
    CHECK(s.translation.rmse >= s.translation.mae - 1e-12);
  }
}

TEST_CASE("score_trial fills the error fields from the pose pair") {
  RigidTransform gt;
  gt.rotation = Eigen::AngleAxisd(0.1, Vector3d::UnitY()).toRotationMatrix();
  gt.translation = Vector3d(0.1, 0.2, 0.3);
  RigidTransform est;
  est.rotation = Eigen::AngleAxisd(0.1 + 0.02, Vector3d::UnitY()).toRotationMatrix();
  est.translation = Vector3d(0.1, 0.2, 0.34);
  TrialReport r = score_trial(4, gt, est);
  CHECK(r.trial_id == 4);
  CHECK(r.rot_error_deg == Catch::Approx(0.02 * 180.0 / M_PI).margin(1e-9));
  CHECK(r.trans_error == Catch::Approx(0.04).margin(1e-12));
}
