#pragma once

// Rigid registration of a source cloud against an SDF by damped
// Levenberg-Marquardt on the per-point SDF residuals. Steps are accepted only
// if the squared residual norm does not increase, so traces are monotone by
// construction; the damping factor adapts multiplicatively on accept/reject.
// register_c2f alternates single accepted pose steps with SDF refinement on
// the accumulated source iterates.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sdfreg/mlp.hpp"
#include "sdfreg/pointcloud.hpp"
#include "sdfreg/rng.hpp"
#include "sdfreg/sdf.hpp"
#include "sdfreg/sdf_train.hpp"
#include "sdfreg/se3.hpp"

namespace sdfreg {

enum class StopReason { converged, max_iters, lambda_ceiling, solver_failure };

inline const char* to_string(StopReason reason) {
  switch (reason) {
    case StopReason::converged: return "converged";
    case StopReason::max_iters: return "max_iters";
    case StopReason::lambda_ceiling: return "lambda_ceiling";
    case StopReason::solver_failure: return "solver_failure";
  }
  return "unknown";
}

struct RegistrationConfig {
  int max_iters = 30;
  double rel_tol = 1e-3;
  double lm_lambda_init = 1e-2;
  double lm_lambda_up = 10.0;
  double lm_lambda_down = 10.0;
  double lm_lambda_max = 1e8;
  RigidTransform initial_pose = RigidTransform::Identity();
  bool c2f_enabled = false;
  int c2f_refine_steps = 50;

  void validate() const {
    if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
    if (!(rel_tol > 0.0)) throw std::invalid_argument("rel_tol must be > 0");
    if (!(lm_lambda_init > 0.0)) throw std::invalid_argument("lm_lambda_init must be > 0");
    if (!(lm_lambda_up > 1.0)) throw std::invalid_argument("lm_lambda_up must be > 1");
    if (!(lm_lambda_down > 1.0)) throw std::invalid_argument("lm_lambda_down must be > 1");
    if (!(lm_lambda_max > 0.0)) throw std::invalid_argument("lm_lambda_max must be > 0");
    if (c2f_refine_steps < 0) throw std::invalid_argument("c2f_refine_steps must be >= 0");
  }
};

struct IterationTraceRow {
  double d_n;            // mean |residual| after this iteration
  double lambda;         // damping used for the step attempt
  double delta_xi_norm;  // norm of the proposed twist increment
};

struct RegistrationResult {
  RigidTransform theta_est = RigidTransform::Identity();
  int iterations = 0;
  StopReason stop_reason = StopReason::max_iters;
  std::vector<IterationTraceRow> trace;
};

/// D_i = SDF(R p_i + t), in source order.
inline Eigen::VectorXd residuals(const SdfModel& sdf, const RigidTransform& T,
                                 const PointCloud& P) {
  if (P.points.empty()) throw std::invalid_argument("residuals: empty source cloud");
  std::vector<Eigen::Vector3d> transformed(P.points.size());
  for (std::size_t i = 0; i < P.points.size(); ++i) transformed[i] = T * P.points[i];
  Eigen::VectorXd D;
  sdf.values(transformed, D);
  return D;
}

/// N x 6 Jacobian of the residuals with respect to a left twist perturbation:
/// row i = grad(SDF)(T p_i)^T . d(T p_i)/d(xi).
inline Eigen::MatrixXd jacobian(const SdfModel& sdf, const RigidTransform& T,
                                const PointCloud& P) {
  if (P.points.empty()) throw std::invalid_argument("jacobian: empty source cloud");
  std::vector<Eigen::Vector3d> transformed(P.points.size());
  for (std::size_t i = 0; i < P.points.size(); ++i) transformed[i] = T * P.points[i];
  std::vector<Eigen::Vector3d> grads;
  sdf.gradients(transformed, grads);
  Eigen::MatrixXd J(static_cast<Eigen::Index>(P.points.size()), 6);
  for (std::size_t i = 0; i < P.points.size(); ++i) {
    const Eigen::Vector3d& g = grads[i];
    J.row(static_cast<Eigen::Index>(i)).head<3>() = transformed[i].cross(g).transpose();
    J.row(static_cast<Eigen::Index>(i)).tail<3>() = g.transpose();
  }
  return J;
}

struct LmStep {
  Twist delta = Twist::Zero();
  bool ok = false;
};

/// Solves (J^T J + lambda * diag(J^T J) + 1e-12 I) dxi = -J^T D. Diagonal
/// entries are floored at 1e-12 before scaling so damping never vanishes.
inline LmStep lm_step(const Eigen::MatrixXd& J, const Eigen::VectorXd& D, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lm_step: lambda must be > 0");
  Eigen::Matrix<double, 6, 6> JtJ = J.transpose() * J;
  Eigen::Matrix<double, 6, 1> g = J.transpose() * D;
  Eigen::Matrix<double, 6, 6> A = JtJ;
  A.diagonal() += lambda * JtJ.diagonal().cwiseMax(1e-12);
  A.diagonal().array() += 1e-12;
  LmStep step;
  if (!A.allFinite() || !g.allFinite()) return step;
  Eigen::LLT<Eigen::Matrix<double, 6, 6>> llt(A);
  if (llt.info() != Eigen::Success) return step;
  Vector6 x = llt.solve(-g);
  if (!x.allFinite()) return step;
  step.delta = Twist::FromCoeffs(x);
  step.ok = true;
  return step;
}

namespace detail {

inline Eigen::VectorXd residuals_at(const SdfModel& sdf, const RigidTransform& T,
                                    const PointCloud& P, int iteration) {
  try {
    return residuals(sdf, T, P);
  } catch (const std::domain_error& e) {
    throw std::domain_error("registration iteration " + std::to_string(iteration) + ": " +
                            e.what());
  }
}

// Shared LM loop state. Acceptance: the squared residual norm must not
// increase; a zero step on a nonzero residual is rejected so degenerate
// (zero-gradient) models climb to the damping ceiling instead of falsely
// converging.
struct LmLoop {
  const PointCloud& P;
  RegistrationConfig cfg;
  RigidTransform theta;
  double lambda;
  Eigen::VectorXd D;
  double s_cur = 0.0;
  double d_prev = 0.0;
  int iter = 0;
  std::optional<StopReason> stop;
  std::vector<IterationTraceRow> trace;
  Eigen::MatrixXd J;
  bool j_valid = false;  // J depends only on (model, theta); reuse across rejections

  LmLoop(const SdfModel& sdf, const PointCloud& P_, const RegistrationConfig& cfg_)
      : P(P_), cfg(cfg_), theta(cfg_.initial_pose), lambda(cfg_.lm_lambda_init) {
    rebind(sdf);
    d_prev = D.cwiseAbs().mean();
  }

  // Re-evaluates the residual state against (a possibly refreshed) model.
  void rebind(const SdfModel& sdf) {
    D = residuals_at(sdf, theta, P, iter);
    s_cur = D.squaredNorm();
    j_valid = false;
  }

  bool exhausted() const { return stop.has_value() || iter >= cfg.max_iters; }

  // Runs one LM iteration; returns true if the step was accepted.
  bool iterate(const SdfModel& sdf) {
    ++iter;
    const double lambda_used = lambda;
    if (!j_valid) {
      J = jacobian(sdf, theta, P);
      j_valid = true;
    }
    LmStep step = lm_step(J, D, lambda_used);
    if (!step.ok) {
      trace.push_back({d_prev, lambda_used, 0.0});
      stop = StopReason::solver_failure;
      return false;
    }
    const double delta_norm = step.delta.coeffs().norm();
    RigidTransform theta_try = compose(exp_twist(step.delta), theta);
    Eigen::VectorXd D_try = residuals_at(sdf, theta_try, P, iter);
    const double s_try = D_try.squaredNorm();
    const bool accepted =
        s_try < s_cur || (s_try == s_cur && (delta_norm > 0.0 || s_cur == 0.0));
    if (accepted) {
      theta = theta_try;
      D = std::move(D_try);
      s_cur = s_try;
      j_valid = false;
      lambda = lambda_used / cfg.lm_lambda_down;
      const double d_n = D.cwiseAbs().mean();
      trace.push_back({d_n, lambda_used, delta_norm});
      const double eps = std::abs(d_n - d_prev) / std::max(d_n, 1e-12);
      d_prev = d_n;
      if (eps < cfg.rel_tol) stop = StopReason::converged;
      return true;
    }
    lambda = lambda_used * cfg.lm_lambda_up;
    trace.push_back({d_prev, lambda_used, delta_norm});
    if (lambda > cfg.lm_lambda_max) stop = StopReason::lambda_ceiling;
    return false;
  }

  RegistrationResult finish() {
    RegistrationResult res;
    res.theta_est = theta;
    res.iterations = iter;
    res.stop_reason = stop.value_or(StopReason::max_iters);
    res.trace = std::move(trace);
    return res;
  }
};

}  // namespace detail

/// Iterative LM registration. Stops on relative change of mean |D| below
/// rel_tol (checked after accepted steps), on the iteration budget, on the
/// damping ceiling, or on a factorization failure. Rejected steps count
/// toward the budget.
inline RegistrationResult register_points(const SdfModel& sdf, const PointCloud& P,
                                          const RegistrationConfig& config) {
  config.validate();
  detail::LmLoop loop(sdf, P, config);
  while (!loop.exhausted()) loop.iterate(sdf);
  return loop.finish();
}

struct C2fResult {
  RegistrationResult result;
  MlpParams params;
  PointCloud accumulated_queries;  // grows by |P| per accepted iteration
};

/// Coarse-to-fine registration: fit an SDF to Q (source points seed the query
/// set), then alternate one accepted LM step with refine_sdf on the
/// accumulated transformed source clouds. A pretrained model skips the
/// initial fit.
inline C2fResult register_c2f(const PointCloud& Q, const PointCloud& P,
                              const TrainConfig& train_cfg, const RegistrationConfig& reg_cfg,
                              const std::optional<MlpParams>& pretrained = std::nullopt) {
  reg_cfg.validate();
  train_cfg.validate();
  if (!reg_cfg.c2f_enabled)
    throw std::invalid_argument("register_c2f requires c2f_enabled");

  C2fResult out;
  AdamState opt_state;
  if (pretrained) {
    out.params = *pretrained;
    opt_state = AdamState::zeros_like(out.params);
  } else {
    PointCloud initial;
    initial.points.reserve(P.points.size());
    for (const auto& p : P.points) initial.points.push_back(reg_cfg.initial_pose * p);
    try {
      out.params = fit_sdf(Q, train_cfg, initial, &opt_state).params;
    } catch (const TrainingDiverged& e) {
      throw std::runtime_error(std::string("c2f fit stage: ") + e.what());
    }
  }

  NeuralSdfModel model(out.params);
  detail::LmLoop loop(model, P, reg_cfg);
  TrainConfig refine_cfg = train_cfg;
  refine_cfg.steps = std::max(reg_cfg.c2f_refine_steps, 1);
  int alternation = 0;

  while (!loop.exhausted()) {
    if (!loop.iterate(model)) continue;
    // Accepted step: grow the query set with the updated source iterate.
    for (const auto& p : P.points) out.accumulated_queries.points.push_back(loop.theta * p);
    if (loop.exhausted() || reg_cfg.c2f_refine_steps == 0) continue;
    ++alternation;
    refine_cfg.seed = derive_seed(train_cfg.seed, static_cast<std::uint64_t>(alternation) + 7);
    try {
      out.params = refine_sdf(out.params, Q, out.accumulated_queries, refine_cfg, &opt_state).params;
    } catch (const TrainingDiverged& e) {
      throw std::runtime_error(std::string("c2f refine stage: ") + e.what());
    }
    model = NeuralSdfModel(out.params);
    loop.rebind(model);
  }
  out.result = loop.finish();
  return out;
}

}  // namespace sdfreg
