#pragma once

// Pose error metrics and batch aggregation. The rotation error is the
// geodesic angle of R_gt^-1 * R_hat, arccos((trace - 1)/2), with the arccos
// argument clamped to [-1, 1] to absorb round-off.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdfreg/se3.hpp"

namespace sdfreg {

inline double rotation_error_deg(const Matrix3& R_gt, const Matrix3& R_hat) {
  Matrix3 rel = R_gt.transpose() * R_hat;
  double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

inline double translation_error(const Vector3& t_gt, const Vector3& t_hat) {
  return (t_gt - t_hat).norm();
}

struct TrialReport {
  int trial_id = 0;
  RigidTransform ground_truth;
  RigidTransform estimate;
  double rot_error_deg = 0.0;
  double trans_error = 0.0;
  int iterations = 0;
  std::string stop_reason;
  double wall_time_ms = 0.0;
};

inline TrialReport score_trial(int trial_id, const RigidTransform& gt,
                               const RigidTransform& est) {
  TrialReport r;
  r.trial_id = trial_id;
  r.ground_truth = gt;
  r.estimate = est;
  r.rot_error_deg = rotation_error_deg(gt.rotation, est.rotation);
  r.trans_error = translation_error(gt.translation, est.translation);
  return r;
}

struct MetricSummary {
  double mae = 0.0;
  double rmse = 0.0;
  double median = 0.0;
};

struct BatchSummary {
  MetricSummary rotation_deg;
  MetricSummary translation;
  std::size_t count = 0;
  double success_rate = 0.0;
  double rot_thresh_deg = 0.0;
  double trans_thresh = 0.0;
};

namespace detail {

inline MetricSummary summarize_metric(std::vector<double> errors) {
  MetricSummary s;
  double abs_sum = 0.0, sq_sum = 0.0;
  for (double e : errors) {
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  auto n = static_cast<double>(errors.size());
  s.mae = abs_sum / n;
  s.rmse = std::sqrt(sq_sum / n);
  std::sort(errors.begin(), errors.end());
  std::size_t m = errors.size();
  s.median = m % 2 == 1 ? errors[m / 2] : 0.5 * (errors[m / 2 - 1] + errors[m / 2]);
  return s;
}

}  // namespace detail

inline BatchSummary summarize(const std::vector<TrialReport>& trials,
                              double rot_thresh_deg, double trans_thresh) {
  if (trials.empty()) throw std::invalid_argument("summarize: no trials");
  std::vector<double> rot, trans;
  rot.reserve(trials.size());
  trans.reserve(trials.size());
  std::size_t successes = 0;
  for (const auto& t : trials) {
    rot.push_back(t.rot_error_deg);
    trans.push_back(t.trans_error);
    if (t.rot_error_deg < rot_thresh_deg && t.trans_error < trans_thresh) ++successes;
  }
  BatchSummary s;
  s.rotation_deg = detail::summarize_metric(std::move(rot));
  s.translation = detail::summarize_metric(std::move(trans));
  s.count = trials.size();
  s.success_rate = static_cast<double>(successes) / static_cast<double>(trials.size());
  s.rot_thresh_deg = rot_thresh_deg;
  s.trans_thresh = trans_thresh;
  return s;
}

}  // namespace sdfreg
