#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <memory>

#include "sdfreg/corruptions.hpp"
#include "sdfreg/metrics.hpp"
#include "sdfreg/registration.hpp"
#include "sdfreg/rng.hpp"
#include "sdfreg/sdf.hpp"
#include "sdfreg/sdf_train.hpp"
#include "sdfreg/se3.hpp"

using namespace sdfreg;
using Eigen::Vector3d;

namespace {

// Degenerate model: nonzero residual everywhere with a vanishing gradient, so
// no step can reduce the residual and damping must escalate to the ceiling.
class ConstantSdf final : public SdfModel {
 public:
  double value(const Vector3d&) const override { return 1.0; }
  Vector3d gradient(const Vector3d&) const override { return Vector3d::Zero(); }
};

std::shared_ptr<const UnionSdf> three_spheres() {
  std::vector<std::shared_ptr<const SdfModel>> kids;
  kids.push_back(std::make_shared<SphereSdf>(Vector3d(-0.45, -0.35, -0.25), 0.55));
  kids.push_back(std::make_shared<SphereSdf>(Vector3d(0.55, 0.0, 0.1), 0.40));
  kids.push_back(std::make_shared<SphereSdf>(Vector3d(0.0, 0.55, 0.35), 0.30));
  return std::make_shared<UnionSdf>(std::move(kids));
}

bool transforms_equal(const RigidTransform& a, const RigidTransform& b) {
  return a.rotation == b.rotation && a.translation == b.translation;
}

}  // namespace

TEST_CASE("residuals evaluate the SDF at transformed source points") {
  PlaneSdf plane(Vector3d::UnitZ(), 0.0);
  PointCloud P;
  P.points = {{0, 0, 0.5}, {1, 2, -0.25}, {3, -1, 0}};
  Eigen::VectorXd D = residuals(plane, RigidTransform::Identity(), P);
  REQUIRE(D.size() == 3);
  CHECK(D[0] == 0.5);
  CHECK(D[1] == -0.25);
  CHECK(D[2] == 0.0);

  RigidTransform lift;
  lift.translation = Vector3d(0, 0, 1);
  Eigen::VectorXd D2 = residuals(plane, lift, P);
  CHECK(D2[0] == 1.5);
  CHECK_THROWS_AS(residuals(plane, lift, PointCloud{}), std::invalid_argument);
}

TEST_CASE("jacobian rows are [x cross g, g] at the transformed points") {
  Vector3d n = Vector3d(0.0, 1.0, 0.0);
  PlaneSdf plane(n, 0.2);
  PointCloud P;
  P.points = {{0.5, 0.1, -0.3}, {-1.0, 0.4, 0.8}};
  RigidTransform T = exp_twist({Vector3d(0.1, -0.2, 0.3), Vector3d(0.4, 0.0, -0.1)});
  Eigen::MatrixXd J = jacobian(plane, T, P);
  REQUIRE(J.rows() == 2);
  for (int i = 0; i < 2; ++i) {
    Vector3d x = T * P.points[static_cast<std::size_t>(i)];
    CHECK((J.row(i).head<3>().transpose() - x.cross(n)).norm() <= 1e-15);
    CHECK((J.row(i).tail<3>().transpose() - n).norm() == 0.0);
  }
}

TEST_CASE("jacobian matches finite differences for analytic, grid, and neural models") {
  auto scene = three_spheres();
  GridSdf grid = bake_grid(*scene, Vector3d(-3.0, -3.0, -3.0), 0.1, {61, 61, 61});
  MlpParams mlp = make_mlp(2, 16, 100.0, MlpParams::kNoSkip, 77);
  NeuralSdfModel neural(mlp);

  PointCloud P = sample_surface(*scene, 24, 4);
  auto rng = make_rng(41);
  PerturbationSpec spec;
  spec.rot_range_deg = 15.0;
  spec.trans_range = 0.15;

  const SdfModel* models[] = {scene.get(), &grid, &neural};
  const double h = 1e-6;
  for (const SdfModel* m : models) {
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 12; ++k) {
      RigidTransform T = random_pose(spec, 1000 + k);
      Eigen::MatrixXd J = jacobian(*m, T, P);
      for (int c = 0; c < 6; ++c) {
        Vector6 d = Vector6::Zero();
        d(c) = h;
        Eigen::VectorXd plus = residuals(*m, compose(exp_twist(Twist::FromCoeffs(d)), T), P);
        Eigen::VectorXd minus = residuals(*m, compose(exp_twist(Twist::FromCoeffs(-d)), T), P);
        Eigen::VectorXd fd = (plus - minus) / (2.0 * h);
        double scale = std::max(1.0, J.col(c).cwiseAbs().maxCoeff());
        worst = std::max(worst, (J.col(c) - fd).cwiseAbs().maxCoeff() / scale);
      }
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("lm_step solves the damped normal equations") {
  // Zero residual: zero step.
  Eigen::MatrixXd J = Eigen::MatrixXd::Identity(6, 6);
  LmStep s0 = lm_step(J, Eigen::VectorXd::Zero(6), 1.0);
  CHECK(s0.ok);
  CHECK(s0.delta.norm() == 0.0);

  // Identity J^T J with lambda 1 doubles the diagonal: delta = -D/2.
  Eigen::VectorXd D(6);
  D << 1, -2, 3, 0.5, -0.25, 4;
  LmStep s1 = lm_step(J, D, 1.0);
  REQUIRE(s1.ok);
  CHECK((s1.delta.coeffs() + D / 2.0).norm() <= 1e-9);

  // Solution satisfies the assembled system to solver precision.
  Eigen::MatrixXd J2(8, 6);
  auto rng = make_rng(42);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 6; ++c) J2(r, c) = u(rng);
  Eigen::VectorXd D2(8);
  for (int r = 0; r < 8; ++r) D2[r] = u(rng);
  const double lambda = 0.37;
  LmStep s2 = lm_step(J2, D2, lambda);
  REQUIRE(s2.ok);
  Eigen::Matrix<double, 6, 6> JtJ = J2.transpose() * J2;
  Eigen::Matrix<double, 6, 6> A = JtJ;
  A.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-12);
  A.diagonal().array() += 1e-12;
  CHECK((A * s2.delta.coeffs() + J2.transpose() * D2).norm() <= 1e-10);

  // Non-finite inputs are rejected, not propagated.
  Eigen::MatrixXd Jbad = J;
  Jbad(0, 0) = std::nan("");
  CHECK_FALSE(lm_step(Jbad, D, 1.0).ok);
  CHECK_THROWS_AS(lm_step(J, D, 0.0), std::invalid_argument);
}

TEST_CASE("already aligned clouds converge immediately") {
  auto scene = three_spheres();
  PointCloud P = sample_surface(*scene, 256, 8);
  RegistrationConfig cfg;
  RegistrationResult res = register_points(*scene, P, cfg);
  CHECK(res.stop_reason == StopReason::converged);
  CHECK(res.iterations <= 2);
  CHECK((res.theta_est.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("oracle registration recovers a 10 degree + 0.1 perturbation") {
  auto scene = three_spheres();
  PointCloud C = sample_surface(*scene, 512, 15);
  PerturbationSpec spec;
  spec.rot_range_deg = 10.0;
  spec.trans_range = 0.1;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    RigidTransform gt = random_pose(spec, seed);
    PointCloud P = apply_transform(gt.inverse(), C);
    RegistrationResult res = register_points(*scene, P, RegistrationConfig{});
    CHECK(rotation_error_deg(gt.rotation, res.theta_est.rotation) < 0.1);
    CHECK(translation_error(gt.translation, res.theta_est.translation) < 1e-3);
    CHECK(res.stop_reason == StopReason::converged);
  }
}

TEST_CASE("zero-gradient model climbs the damping ladder to the ceiling") {
  ConstantSdf flat;
  PointCloud P;
  P.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  RegistrationConfig cfg;
  RegistrationResult res = register_points(flat, P, cfg);
  CHECK(res.stop_reason == StopReason::lambda_ceiling);
  // Pose must not move on rejected zero steps.
  CHECK((res.theta_est.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() == 0.0);
  // Damping grows by lm_lambda_up per rejection, starting at lm_lambda_init.
  REQUIRE(res.trace.size() >= 2);
  for (std::size_t i = 1; i < res.trace.size(); ++i)
    CHECK(res.trace[i].lambda == Catch::Approx(res.trace[i - 1].lambda * cfg.lm_lambda_up));
  CHECK(res.trace.back().lambda * cfg.lm_lambda_up > cfg.lm_lambda_max);
}

TEST_CASE("trace is monotone on accepted steps and bounded in damping") {
  auto scene = three_spheres();
  PointCloud C = sample_surface(*scene, 256, 21);
  PerturbationSpec spec;
  spec.rot_range_deg = 25.0;
  spec.trans_range = 0.3;
  RigidTransform gt = random_pose(spec, 77);
  PointCloud P = apply_transform(gt.inverse(), C);
  RegistrationConfig cfg;
  RegistrationResult res = register_points(*scene, P, cfg);
  REQUIRE(!res.trace.empty());
  CHECK(res.iterations == static_cast<int>(res.trace.size()));
  for (std::size_t i = 0; i < res.trace.size(); ++i) {
    CHECK(res.trace[i].lambda >= 1e-12);
    CHECK(res.trace[i].lambda <= cfg.lm_lambda_max);
    if (i > 0) CHECK(res.trace[i].d_n <= res.trace[i - 1].d_n + 1e-15);
  }
}

TEST_CASE("registration is deterministic") {
  auto scene = three_spheres();
  PointCloud C = sample_surface(*scene, 128, 5);
  RigidTransform gt = random_pose(PerturbationSpec{}, 9);
  PointCloud P = apply_transform(gt.inverse(), C);
  RegistrationResult a = register_points(*scene, P, RegistrationConfig{});
  RegistrationResult b = register_points(*scene, P, RegistrationConfig{});
  CHECK(transforms_equal(a.theta_est, b.theta_est));
  CHECK(a.iterations == b.iterations);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].d_n == b.trace[i].d_n);
    CHECK(a.trace[i].lambda == b.trace[i].lambda);
  }
}

TEST_CASE("grid bound violations surface as iteration-tagged domain errors") {
  SphereSdf sphere(Vector3d::Zero(), 0.5);
  GridSdf grid = bake_grid(sphere, Vector3d(-0.7, -0.7, -0.7), 0.35, {5, 5, 5});
  PointCloud P;
  P.points = {{0.5, 0.0, 0.0}, {0.0, 0.5, 0.0}};
  RegistrationConfig cfg;
  cfg.initial_pose.translation = Vector3d(5.0, 0.0, 0.0);  // far outside the lattice
  CHECK_THROWS_WITH(register_points(grid, P, cfg),
                    Catch::Matchers::ContainsSubstring("registration iteration"));
}

TEST_CASE("registration config validation") {
  RegistrationConfig cfg;
  cfg.max_iters = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RegistrationConfig{};
  cfg.lm_lambda_up = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RegistrationConfig{};
  cfg.lm_lambda_down = 0.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RegistrationConfig{};
  cfg.rel_tol = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RegistrationConfig{};
  cfg.c2f_refine_steps = -1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_NOTHROW(RegistrationConfig{}.validate());
  CHECK(std::string(to_string(StopReason::converged)) == "converged");
  CHECK(std::string(to_string(StopReason::lambda_ceiling)) == "lambda_ceiling");
}

TEST_CASE("c2f with zero refine steps equals plain registration on the same net") {
  SphereSdf sphere(Vector3d(0.1, 0.0, -0.1), 0.6);
  PointCloud Q = sample_surface(sphere, 128, 31);
  TrainConfig tc;
  tc.hidden_layers = 2;
  tc.hidden_width = 32;
  tc.steps = 200;
  tc.batch_size = 32;
  tc.seed = 3;
  FitResult fit = fit_sdf(Q, tc);

  PerturbationSpec spec;
  spec.rot_range_deg = 8.0;
  spec.trans_range = 0.05;
  RigidTransform gt = random_pose(spec, 12);
  PointCloud P = apply_transform(gt.inverse(), sample_surface(sphere, 96, 32));

  RegistrationConfig rc;
  rc.c2f_enabled = true;
  rc.c2f_refine_steps = 0;
  C2fResult c2f = register_c2f(Q, P, tc, rc, fit.params);

  NeuralSdfModel model(fit.params);
  RegistrationConfig plain = rc;
  plain.c2f_enabled = false;
  RegistrationResult direct = register_points(model, P, plain);

  CHECK(transforms_equal(c2f.result.theta_est, direct.theta_est));
  CHECK(c2f.result.iterations == direct.iterations);
  CHECK(c2f.result.stop_reason == direct.stop_reason);
  // One appended source cloud per accepted step.
  CHECK(c2f.accumulated_queries.size() % P.size() == 0);
}

TEST_CASE("c2f accumulates one source cloud per accepted iteration") {
  SphereSdf sphere(Vector3d::Zero(), 0.6);
  PointCloud Q = sample_surface(sphere, 128, 33);
  TrainConfig tc;
  tc.hidden_layers = 2;
  tc.hidden_width = 32;
  tc.steps = 250;
  tc.batch_size = 32;
  tc.seed = 4;

  PerturbationSpec spec;
  spec.rot_range_deg = 6.0;
  spec.trans_range = 0.04;
  RigidTransform gt = random_pose(spec, 13);
  PointCloud P = apply_transform(gt.inverse(), sample_surface(sphere, 64, 34));

  RegistrationConfig rc;
  rc.c2f_enabled = true;
  rc.c2f_refine_steps = 10;
  rc.max_iters = 20;
  C2fResult out = register_c2f(Q, P, tc, rc);

  // Acceptance is readable off the trace: an accepted attempt divides the
  // next attempt's damping by exactly lm_lambda_down, a rejection multiplies
  // it by lm_lambda_up. The final attempt has no successor, but a rejected
  // row repeats the previous residual mean bitwise (d_prev survives model
  // refreshes), so comparing it against the last accepted row settles it.
  const auto& trace = out.result.trace;
  REQUIRE(trace.size() == static_cast<std::size_t>(out.result.iterations));
  REQUIRE(trace[0].lambda == rc.lm_lambda_init);
  std::size_t accepted = 0;
  std::size_t last_accepted = trace.size();
  for (std::size_t i = 0; i + 1 < trace.size(); ++i) {
    double next = trace[i + 1].lambda;
    double cur = trace[i].lambda;
    REQUIRE((next == cur / rc.lm_lambda_down || next == cur * rc.lm_lambda_up));
    if (next == cur / rc.lm_lambda_down) {
      ++accepted;
      last_accepted = i;
    }
  }
  REQUIRE(accepted >= 1);
  if (trace.back().d_n != trace[last_accepted].d_n) ++accepted;
  CHECK(out.accumulated_queries.size() == P.size() * accepted);
  CHECK(out.params.layers.size() == tc.hidden_layers + 1u);

  RegistrationConfig off;
  off.c2f_enabled = false;
  CHECK_THROWS_AS(register_c2f(Q, P, tc, off), std::invalid_argument);
}
