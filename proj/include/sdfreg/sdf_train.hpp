#pragma once

// Self-supervised SDF training. Queries drawn around the target cloud are
// projected toward the surface by the current network estimate; the loss
// penalizes the gap between that projection and the true nearest target
// point, plus a weighted |Phi| term on the targets themselves and an Eikonal
// term keeping the gradient near unit norm. refine_sdf runs the same
// objective restricted to an externally accumulated query set, which is how
// coarse-to-fine registration feeds source iterates back into the model.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sdfreg/mlp.hpp"
#include "sdfreg/pointcloud.hpp"
#include "sdfreg/rng.hpp"

namespace sdfreg {

struct TrainConfig {
  double lambda_q = 0.01;
  double lambda_e = 0.001;
  int steps = 2000;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double query_box_padding = 0.1;
  std::uint64_t seed = 0;
  int hidden_layers = 4;
  int hidden_width = 128;

  void validate() const {
    if (lambda_q < 0.0) throw std::invalid_argument("lambda_q must be >= 0");
    if (lambda_e < 0.0) throw std::invalid_argument("lambda_e must be >= 0");
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (query_box_padding < 0.0) throw std::invalid_argument("query_box_padding must be >= 0");
    if (hidden_layers < 0) throw std::invalid_argument("hidden_layers must be >= 0");
    if (hidden_width < 1) throw std::invalid_argument("hidden_width must be >= 1");
  }
};

/// Query points paired with their precomputed nearest target points.
struct QuerySet {
  std::vector<Eigen::Vector3d> points;
  std::vector<Eigen::Vector3d> targets;
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(int step)
      : std::runtime_error("training diverged at step " + std::to_string(step) +
                           " (non-finite loss)"),
        step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

struct LossTraceRow {
  int step;
  double loss_self;
  double loss_eikonal;
  double loss_total;
};

struct FitResult {
  MlpParams params;
  std::vector<LossTraceRow> trace;
};

/// Exact nearest neighbor by brute force; ties go to the lowest index.
inline std::pair<Eigen::Vector3d, std::size_t> nearest_surface_point(const Eigen::Vector3d& x,
                                                                     const PointCloud& Q) {
  if (Q.points.empty()) throw std::invalid_argument("nearest_surface_point: empty cloud");
  std::size_t best = 0;
  double best_d2 = (x - Q.points[0]).squaredNorm();
  for (std::size_t i = 1; i < Q.points.size(); ++i) {
    double d2 = (x - Q.points[i]).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return {Q.points[best], best};
}

inline QuerySet make_query_set(std::span<const Eigen::Vector3d> xs, const PointCloud& Q) {
  QuerySet qs;
  qs.points.assign(xs.begin(), xs.end());
  qs.targets.reserve(xs.size());
  for (const auto& x : qs.points) qs.targets.push_back(nearest_surface_point(x, Q).first);
  return qs;
}

/// Surface estimate t_hat = x - dir * |phi| where dir points from t toward x.
/// Both SDF signs move the query toward t; a query already at t stays put.
inline Eigen::Vector3d project_estimate(const Eigen::Vector3d& x, const Eigen::Vector3d& t,
                                        double phi) {
  Eigen::Vector3d d = x - t;
  double n = d.norm();
  if (n < 1e-12) return x;
  return x - d * (std::abs(phi) / n);
}

/// Projection loss: mean ||t_hat - t||^2 over queries plus
/// lambda_q * mean |Phi(q)| over the target cloud.
inline double loss_self(const MlpParams& params, const QuerySet& query_set, const PointCloud& Q,
                        double lambda_q) {
  if (query_set.points.size() != query_set.targets.size())
    throw std::invalid_argument("loss_self: query/target length mismatch");
  double total = 0.0;
  if (!query_set.points.empty()) {
    Eigen::MatrixXd X = detail::pack_columns(query_set.points);
    MlpBatchCache cache;
    const Eigen::RowVectorXd& y = mlp_forward_batch(params, X, cache);
    double acc = 0.0;
    for (std::size_t j = 0; j < query_set.points.size(); ++j) {
      Eigen::Vector3d t_hat = project_estimate(query_set.points[j], query_set.targets[j],
                                               y[static_cast<Eigen::Index>(j)]);
      acc += (t_hat - query_set.targets[j]).squaredNorm();
    }
    total += acc / static_cast<double>(query_set.points.size());
  }
  if (lambda_q != 0.0 && !Q.points.empty()) {
    Eigen::MatrixXd QX = detail::pack_columns(Q.points);
    MlpBatchCache cache;
    const Eigen::RowVectorXd& y = mlp_forward_batch(params, QX, cache);
    total += lambda_q * y.cwiseAbs().mean();
  }
  return total;
}

/// Mean (||grad Phi|| - 1)^2 over the given query points.
inline double loss_eikonal(const MlpParams& params, std::span<const Eigen::Vector3d> xs) {
  if (xs.empty()) return 0.0;
  Eigen::MatrixXd X = detail::pack_columns(xs);
  MlpBatchCache cache;
  mlp_forward_batch(params, X, cache);
  Eigen::MatrixXd G = mlp_input_gradient_batch(params, X, cache);
  double acc = 0.0;
  for (Eigen::Index j = 0; j < G.cols(); ++j) {
    double e = G.col(j).norm() - 1.0;
    acc += e * e;
  }
  return acc / static_cast<double>(G.cols());
}

/// Adaptive-moment optimizer state. Exposed so a refinement schedule can
/// continue the same optimizer run instead of restarting with cold moments
/// (a cold restart briefly takes full-size steps and wrecks a converged fit).
struct AdamState {
  std::vector<DenseLayer> m, v;
  long t = 0;

  static AdamState zeros_like(const MlpParams& params) {
    AdamState st;
    auto z = MlpGradients::zeros_like(params);
    st.m = z.layers;
    st.v = std::move(z.layers);
    return st;
  }

  bool shaped_like(const MlpParams& params) const {
    if (m.size() != params.layers.size() || v.size() != params.layers.size()) return false;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      if (m[l].weights.rows() != params.layers[l].weights.rows() ||
          m[l].weights.cols() != params.layers[l].weights.cols())
        return false;
    }
    return true;
  }
};

namespace detail {

inline void adam_step(MlpParams& params, const MlpGradients& grads, AdamState& st, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  st.t += 1;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto apply = [&](auto& theta, auto& m, auto& v, const auto& g) {
      m = b1 * m.array() + (1.0 - b1) * g.array();
      v = b2 * v.array() + (1.0 - b2) * g.array().square();
      theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    apply(params.layers[l].weights, st.m[l].weights, st.v[l].weights, grads.layers[l].weights);
    apply(params.layers[l].biases, st.m[l].biases, st.v[l].biases, grads.layers[l].biases);
  }
}

struct BatchLosses {
  double loss_self = 0.0;
  double loss_eikonal = 0.0;
};

// Minibatch losses plus parameter gradients. X columns are queries with
// precomputed nearest targets; QB columns are target-cloud samples for the
// |Phi| term. Gradient conventions at nondifferentiable points: sign(0) = +1,
// zero-length directions contribute nothing.
inline BatchLosses loss_and_grads(const MlpParams& params, const Eigen::MatrixXd& X,
                                  const std::vector<Eigen::Vector3d>& targets,
                                  const Eigen::MatrixXd& QB, double lambda_q, double lambda_e,
                                  MlpGradients& grads) {
  BatchLosses ev;
  const Eigen::Index bx = X.cols();
  if (bx > 0) {
    MlpBatchCache cache;
    Eigen::RowVectorXd y = mlp_forward_batch(params, X, cache);
    Eigen::MatrixXd G = mlp_input_gradient_batch(params, X, cache);
    LossAdjoints adj = LossAdjoints::zeros(bx);
    const double inv_bx = 1.0 / static_cast<double>(bx);
    for (Eigen::Index j = 0; j < bx; ++j) {
      const double phi = y[j];
      const double sign_phi = phi < 0.0 ? -1.0 : 1.0;
      const double dist = (X.col(j) - targets[static_cast<std::size_t>(j)]).norm();
      if (dist >= 1e-12) {
        const double err = dist - std::abs(phi);
        ev.loss_self += err * err;
        adj.value[j] = -2.0 * err * sign_phi * inv_bx;
      }
      const double gn = G.col(j).norm();
      const double e = gn - 1.0;
      ev.loss_eikonal += e * e;
      if (lambda_e > 0.0 && gn >= 1e-12)
        adj.grad.col(j) = (lambda_e * 2.0 * e * inv_bx / gn) * G.col(j);
    }
    ev.loss_self *= inv_bx;
    ev.loss_eikonal *= inv_bx;
    mlp_grad_params_accumulate(params, X, adj, grads);
  }
  if (lambda_q > 0.0 && QB.cols() > 0) {
    const Eigen::Index bq = QB.cols();
    MlpBatchCache cache;
    Eigen::RowVectorXd y = mlp_forward_batch(params, QB, cache);
    LossAdjoints adj = LossAdjoints::zeros(bq);
    const double w = lambda_q / static_cast<double>(bq);
    double point_term = 0.0;
    for (Eigen::Index i = 0; i < bq; ++i) {
      point_term += std::abs(y[i]);
      adj.value[i] = y[i] < 0.0 ? -w : w;
    }
    ev.loss_self += w * point_term;
    mlp_grad_params_accumulate(params, QB, adj, grads);
  }
  return ev;
}

// Median nearest-neighbor spacing; reference points are strided down to at
// most 2048 so the estimate stays cheap on large clouds.
inline double median_nn_spacing(const PointCloud& Q) {
  const std::size_t n = Q.points.size();
  if (n < 2) return 0.0;
  const std::size_t stride = (n + 2047) / 2048;
  std::vector<double> dists;
  for (std::size_t i = 0; i < n; i += stride) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      best = std::min(best, (Q.points[i] - Q.points[j]).squaredNorm());
    }
    dists.push_back(std::sqrt(best));
  }
  auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  return *mid;
}

}  // namespace detail

/// Trains a fresh MLP on Q. Per step the query batch is half uniform samples
/// in Q's padded bounding box and half Gaussian-perturbed target points
/// (sigma = 2x median nearest-neighbor spacing); when initial_queries are
/// supplied the batch is split in thirds with the extra share drawn from
/// them. Deterministic per seed. If opt_state is non-null it receives the
/// final optimizer state so later refine_sdf calls can continue the run.
inline FitResult fit_sdf(const PointCloud& Q, const TrainConfig& config,
                         const PointCloud& initial_queries = {},
                         AdamState* opt_state = nullptr) {
  config.validate();
  if (Q.points.size() < 10)
    throw std::invalid_argument("fit_sdf: target cloud needs at least 10 points");

  MlpParams params = make_mlp(config.hidden_layers, config.hidden_width, 100.0,
                              MlpParams::kNoSkip, derive_seed(config.seed, 0));
  auto rng = make_rng(derive_seed(config.seed, 1));

  Eigen::Vector3d lo = Q.points[0], hi = Q.points[0];
  for (const auto& p : Q.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  lo.array() -= config.query_box_padding;
  hi.array() += config.query_box_padding;
  const double sigma = std::max(2.0 * detail::median_nn_spacing(Q), 1e-12);

  const int B = config.batch_size;
  const bool has_init = !initial_queries.points.empty();
  const int n_uni = has_init ? B / 3 : B - B / 2;
  const int n_pert = has_init ? B / 3 : B / 2;
  const int n_init = B - n_uni - n_pert;

  std::uniform_real_distribution<double> ux(lo.x(), hi.x());
  std::uniform_real_distribution<double> uy(lo.y(), hi.y());
  std::uniform_real_distribution<double> uz(lo.z(), hi.z());
  std::normal_distribution<double> gauss(0.0, sigma);
  std::uniform_int_distribution<std::size_t> pick_q(0, Q.points.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_init(
      0, has_init ? initial_queries.points.size() - 1 : 0);

  AdamState adam = AdamState::zeros_like(params);
  std::vector<LossTraceRow> trace;
  trace.reserve(static_cast<std::size_t>(config.steps));
  Eigen::MatrixXd X(3, B), QB(3, B);
  std::vector<Eigen::Vector3d> targets(static_cast<std::size_t>(B));

  for (int step = 0; step < config.steps; ++step) {
    Eigen::Index col = 0;
    for (int i = 0; i < n_uni; ++i) {
      double x = ux(rng);
      double y = uy(rng);
      double z = uz(rng);
      X.col(col++) = Eigen::Vector3d(x, y, z);
    }
    for (int i = 0; i < n_pert; ++i) {
      const Eigen::Vector3d& q = Q.points[pick_q(rng)];
      double dx = gauss(rng);
      double dy = gauss(rng);
      double dz = gauss(rng);
      X.col(col++) = q + Eigen::Vector3d(dx, dy, dz);
    }
    for (int i = 0; i < n_init; ++i) X.col(col++) = initial_queries.points[pick_init(rng)];
    for (int j = 0; j < B; ++j)
      targets[static_cast<std::size_t>(j)] = nearest_surface_point(X.col(j), Q).first;
    for (int i = 0; i < B; ++i) QB.col(i) = Q.points[pick_q(rng)];

    MlpGradients grads = MlpGradients::zeros_like(params);
    auto ev = detail::loss_and_grads(params, X, targets, QB, config.lambda_q, config.lambda_e,
                                     grads);
    const double total = ev.loss_self + config.lambda_e * ev.loss_eikonal;
    if (!std::isfinite(total)) throw TrainingDiverged(step);
    trace.push_back({step, ev.loss_self, ev.loss_eikonal, total});
    detail::adam_step(params, grads, adam, config.learning_rate);
  }
  if (opt_state) *opt_state = std::move(adam);
  return {std::move(params), std::move(trace)};
}

/// Continues training with the query set fixed to extra_queries (no space
/// sampling); targets are still their nearest points in Q. Empty extras
/// return the parameters unchanged. A non-null opt_state (shaped like
/// params) is continued and updated in place; null starts fresh moments.
inline FitResult refine_sdf(const MlpParams& params, const PointCloud& Q,
                            const PointCloud& extra_queries, const TrainConfig& config,
                            AdamState* opt_state = nullptr) {
  config.validate();
  if (opt_state && !opt_state->shaped_like(params))
    throw std::invalid_argument("refine_sdf: optimizer state does not match parameters");
  if (extra_queries.points.empty()) return {params, {}};
  if (Q.points.empty()) throw std::invalid_argument("refine_sdf: empty target cloud");

  MlpParams out = params;
  auto rng = make_rng(derive_seed(config.seed, 1));

  std::vector<Eigen::Vector3d> all_targets(extra_queries.points.size());
  for (std::size_t i = 0; i < extra_queries.points.size(); ++i)
    all_targets[i] = nearest_surface_point(extra_queries.points[i], Q).first;

  const int B = config.batch_size;
  std::uniform_int_distribution<std::size_t> pick_x(0, extra_queries.points.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_q(0, Q.points.size() - 1);

  AdamState local = AdamState::zeros_like(out);
  AdamState& adam = opt_state ? *opt_state : local;
  std::vector<LossTraceRow> trace;
  trace.reserve(static_cast<std::size_t>(config.steps));
  Eigen::MatrixXd X(3, B), QB(3, B);
  std::vector<Eigen::Vector3d> targets(static_cast<std::size_t>(B));

  for (int step = 0; step < config.steps; ++step) {
    for (int j = 0; j < B; ++j) {
      std::size_t idx = pick_x(rng);
      X.col(j) = extra_queries.points[idx];
      targets[static_cast<std::size_t>(j)] = all_targets[idx];
    }
    for (int i = 0; i < B; ++i) QB.col(i) = Q.points[pick_q(rng)];

    MlpGradients grads = MlpGradients::zeros_like(out);
    auto ev = detail::loss_and_grads(out, X, targets, QB, config.lambda_q, config.lambda_e,
                                     grads);
    const double total = ev.loss_self + config.lambda_e * ev.loss_eikonal;
    if (!std::isfinite(total)) throw TrainingDiverged(step);
    trace.push_back({step, ev.loss_self, ev.loss_eikonal, total});
    detail::adam_step(out, grads, adam, config.learning_rate);
  }
  return {std::move(out), std::move(trace)};
}

}  // namespace sdfreg
