#pragma once

// Multilayer perceptron SDF: forward evaluation, exact input gradient via
// reverse mode, and parameter gradients of losses that may depend on both the
// output value and the input gradient. The gradient-dependent part is handled
// by a forward tangent pass in the adjoint direction followed by one reverse
// sweep over the joint graph, which is exact (no finite differencing).
//
// Layout: input width 3, scalar output, hidden activation softplus with
// sharpness beta, final layer linear. An optional skip connection appends the
// raw input to the features entering one designated layer, so that layer's
// weight matrix has prev_width + 3 columns.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdfreg/rng.hpp"
#include "sdfreg/sdf.hpp"

namespace sdfreg {

struct DenseLayer {
  Eigen::MatrixXd weights;
  Eigen::VectorXd biases;
};

struct MlpParams {
  static constexpr std::uint32_t kNoSkip = 0xFFFFFFFFu;

  std::vector<DenseLayer> layers;
  double beta = 100.0;
  std::uint32_t skip_layer = kNoSkip;  // index of the layer receiving [h; x]

  int hidden_count() const { return static_cast<int>(layers.size()) - 1; }

  void validate() const {
    if (layers.empty()) throw std::invalid_argument("mlp needs at least one layer");
    if (!(beta > 0.0)) throw std::invalid_argument("softplus beta must be > 0");
    if (skip_layer != kNoSkip &&
        (skip_layer == 0 || skip_layer >= layers.size()))
      throw std::invalid_argument("skip layer index out of range");
    Eigen::Index prev = 3;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l];
      Eigen::Index expected_cols = prev + (skip_layer == l ? 3 : 0);
      if (layer.weights.cols() != expected_cols)
        throw std::invalid_argument("layer " + std::to_string(l) + " weight columns " +
                                    std::to_string(layer.weights.cols()) + " do not compose (expected " +
                                    std::to_string(expected_cols) + ")");
      if (layer.biases.size() != layer.weights.rows())
        throw std::invalid_argument("layer " + std::to_string(l) + " bias size mismatch");
      if (!layer.weights.allFinite() || !layer.biases.allFinite())
        throw std::invalid_argument("layer " + std::to_string(l) + " has non-finite parameters");
      prev = layer.weights.rows();
    }
    if (layers.back().weights.rows() != 1)
      throw std::invalid_argument("output layer must have a single row");
  }
};

/// Parameter-shaped accumulator (same layer shapes as the source MLP).
struct MlpGradients {
  std::vector<DenseLayer> layers;

  static MlpGradients zeros_like(const MlpParams& params) {
    MlpGradients g;
    g.layers.reserve(params.layers.size());
    for (const auto& layer : params.layers)
      g.layers.push_back({Eigen::MatrixXd::Zero(layer.weights.rows(), layer.weights.cols()),
                          Eigen::VectorXd::Zero(layer.biases.size())});
    return g;
  }
};

namespace detail {

inline double softplus(double z, double beta) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(beta * z))) / beta;
}

inline double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  double e = std::exp(t);
  return e / (1.0 + e);
}

inline Eigen::MatrixXd softplus_mat(const Eigen::MatrixXd& a, double beta) {
  return a.unaryExpr([beta](double z) { return softplus(z, beta); });
}

inline Eigen::MatrixXd pack_columns(std::span<const Eigen::Vector3d> xs) {
  Eigen::MatrixXd X(3, static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = xs[i];
  return X;
}

// First derivative of softplus_beta.
inline Eigen::MatrixXd softplus_d1(const Eigen::MatrixXd& a, double beta) {
  return a.unaryExpr([beta](double z) { return logistic(beta * z); });
}

// Second derivative: beta * s * (1 - s).
inline Eigen::MatrixXd softplus_d2(const Eigen::MatrixXd& a, double beta) {
  return a.unaryExpr([beta](double z) {
    double s = logistic(beta * z);
    return beta * s * (1.0 - s);
  });
}

}  // namespace detail

/// Activations cached by the batched forward pass; X columns are points.
struct MlpBatchCache {
  std::vector<Eigen::MatrixXd> a;  // pre-activations, per hidden layer
  std::vector<Eigen::MatrixXd> h;  // activations, per hidden layer
  Eigen::RowVectorXd y;
};

/// Forward pass over a 3xB batch; fills the cache and returns 1xB outputs.
inline const Eigen::RowVectorXd& mlp_forward_batch(const MlpParams& params,
                                                   const Eigen::MatrixXd& X,
                                                   MlpBatchCache& cache) {
  const int hidden = params.hidden_count();
  cache.a.resize(hidden);
  cache.h.resize(hidden);
  for (int l = 0; l < hidden; ++l) {
    const auto& W = params.layers[l].weights;
    if (l == 0) {
      cache.a[l].noalias() = W * X;
    } else if (params.skip_layer == static_cast<std::uint32_t>(l)) {
      Eigen::Index prev = cache.h[l - 1].rows();
      cache.a[l].noalias() = W.leftCols(prev) * cache.h[l - 1];
      cache.a[l].noalias() += W.rightCols(3) * X;
    } else {
      cache.a[l].noalias() = W * cache.h[l - 1];
    }
    cache.a[l].colwise() += params.layers[l].biases;
    cache.h[l] = detail::softplus_mat(cache.a[l], params.beta);
  }
  const auto& out = params.layers.back();
  if (hidden == 0) {
    cache.y.noalias() = out.weights * X;
  } else if (params.skip_layer == static_cast<std::uint32_t>(hidden)) {
    Eigen::Index prev = cache.h[hidden - 1].rows();
    cache.y.noalias() = out.weights.leftCols(prev) * cache.h[hidden - 1];
    cache.y.noalias() += out.weights.rightCols(3) * X;
  } else {
    cache.y.noalias() = out.weights * cache.h[hidden - 1];
  }
  cache.y.array() += out.biases[0];
  return cache.y;
}

/// d(output)/d(input) for every column of the batch, using the cache filled
/// by mlp_forward_batch on the same X.
inline Eigen::MatrixXd mlp_input_gradient_batch(const MlpParams& params,
                                                const Eigen::MatrixXd& X,
                                                const MlpBatchCache& cache) {
  const int hidden = params.hidden_count();
  const Eigen::Index B = X.cols();
  const auto& out = params.layers.back();
  if (hidden == 0) return out.weights.transpose().replicate(1, B);

  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(3, B);
  Eigen::MatrixXd V;  // adjoint of h[l]
  {
    Eigen::Index prev = cache.h[hidden - 1].rows();
    V = out.weights.leftCols(prev).transpose().replicate(1, B);
    if (params.skip_layer == static_cast<std::uint32_t>(hidden))
      G += out.weights.rightCols(3).transpose().replicate(1, B);
  }
  for (int l = hidden - 1; l >= 0; --l) {
    Eigen::MatrixXd D = V.cwiseProduct(detail::softplus_d1(cache.a[l], params.beta));
    const auto& W = params.layers[l].weights;
    if (l == 0) {
      G.noalias() += W.transpose() * D;
    } else if (params.skip_layer == static_cast<std::uint32_t>(l)) {
      Eigen::Index prev = cache.h[l - 1].rows();
      G.noalias() += W.rightCols(3).transpose() * D;
      V.noalias() = W.leftCols(prev).transpose() * D;
    } else {
      V = W.transpose() * D;
    }
  }
  return G;
}

inline double mlp_forward(const MlpParams& params, const Eigen::Vector3d& x) {
  MlpBatchCache cache;
  return mlp_forward_batch(params, x, cache)[0];
}

inline Eigen::Vector3d mlp_grad_input(const MlpParams& params, const Eigen::Vector3d& x) {
  MlpBatchCache cache;
  mlp_forward_batch(params, x, cache);
  return mlp_input_gradient_batch(params, x, cache).col(0);
}

/// Per-column adjoints of a scalar loss: dL/d(output) and dL/d(input-grad).
struct LossAdjoints {
  Eigen::RowVectorXd value;  // 1xB
  Eigen::MatrixXd grad;      // 3xB; all-zero columns are free

  static LossAdjoints zeros(Eigen::Index batch) {
    return {Eigen::RowVectorXd::Zero(batch), Eigen::MatrixXd::Zero(3, batch)};
  }
};

/// Exact parameter gradients of sum_b [ value_b * Phi(x_b) + grad_b . dPhi(x_b)/dx ].
/// The second term differentiates through the input-gradient computation, so
/// gradient-dependent losses (Eikonal) get exact second-order treatment.
inline void mlp_grad_params_accumulate(const MlpParams& params, const Eigen::MatrixXd& X,
                                       const LossAdjoints& adj, MlpGradients& grads) {
  const int hidden = params.hidden_count();
  const Eigen::Index B = X.cols();
  if (adj.value.size() != B || adj.grad.cols() != B)
    throw std::invalid_argument("adjoint batch size mismatch");

  MlpBatchCache cache;
  mlp_forward_batch(params, X, cache);

  const bool has_grad_term = adj.grad.cwiseAbs().maxCoeff() > 0.0;

  // Tangent pass in the direction of the gradient adjoints: for each column,
  // ydot = grad_b . dPhi/dx, so the reverse sweep below sees the gradient
  // term as a plain scalar output.
  std::vector<Eigen::MatrixXd> adot(hidden), hdot(hidden);
  if (has_grad_term) {
    for (int l = 0; l < hidden; ++l) {
      const auto& W = params.layers[l].weights;
      if (l == 0) {
        adot[l].noalias() = W * adj.grad;
      } else if (params.skip_layer == static_cast<std::uint32_t>(l)) {
        Eigen::Index prev = cache.h[l - 1].rows();
        adot[l].noalias() = W.leftCols(prev) * hdot[l - 1];
        adot[l].noalias() += W.rightCols(3) * adj.grad;
      } else {
        adot[l].noalias() = W * hdot[l - 1];
      }
      hdot[l] = detail::softplus_d1(cache.a[l], params.beta).cwiseProduct(adot[l]);
    }
  }

  const Eigen::RowVectorXd ones = Eigen::RowVectorXd::Ones(B);
  Eigen::MatrixXd hbar, hdbar;  // adjoints of h[l] and hdot[l]

  {  // output layer
    auto& g = grads.layers.back();
    const auto& W = params.layers.back().weights;
    if (hidden == 0) {
      g.weights.noalias() += adj.value * X.transpose();
      if (has_grad_term) g.weights.noalias() += ones * adj.grad.transpose();
      g.biases[0] += adj.value.sum();
    } else {
      Eigen::Index prev = cache.h[hidden - 1].rows();
      g.weights.leftCols(prev).noalias() += adj.value * cache.h[hidden - 1].transpose();
      if (has_grad_term)
        g.weights.leftCols(prev).noalias() += ones * hdot[hidden - 1].transpose();
      if (params.skip_layer == static_cast<std::uint32_t>(hidden)) {
        g.weights.rightCols(3).noalias() += adj.value * X.transpose();
        if (has_grad_term) g.weights.rightCols(3).noalias() += ones * adj.grad.transpose();
      }
      g.biases[0] += adj.value.sum();
      hbar.noalias() = W.leftCols(prev).transpose() * adj.value;
      if (has_grad_term) hdbar = W.leftCols(prev).transpose() * ones;
    }
  }

  for (int l = hidden - 1; l >= 0; --l) {
    Eigen::MatrixXd sp = detail::softplus_d1(cache.a[l], params.beta);
    Eigen::MatrixXd abar = hbar.cwiseProduct(sp);
    Eigen::MatrixXd adbar;
    if (has_grad_term) {
      abar += hdbar.cwiseProduct(detail::softplus_d2(cache.a[l], params.beta))
                  .cwiseProduct(adot[l]);
      adbar = hdbar.cwiseProduct(sp);
    }
    auto& g = grads.layers[l];
    const auto& W = params.layers[l].weights;
    if (l == 0) {
      g.weights.noalias() += abar * X.transpose();
      if (has_grad_term) g.weights.noalias() += adbar * adj.grad.transpose();
    } else {
      Eigen::Index prev = cache.h[l - 1].rows();
      g.weights.leftCols(prev).noalias() += abar * cache.h[l - 1].transpose();
      if (has_grad_term)
        g.weights.leftCols(prev).noalias() += adbar * hdot[l - 1].transpose();
      if (params.skip_layer == static_cast<std::uint32_t>(l)) {
        g.weights.rightCols(3).noalias() += abar * X.transpose();
        if (has_grad_term) g.weights.rightCols(3).noalias() += adbar * adj.grad.transpose();
      }
    }
    g.biases += abar.rowwise().sum();
    if (l > 0) {
      Eigen::Index prev = cache.h[l - 1].rows();
      hbar.noalias() = W.leftCols(prev).transpose() * abar;
      if (has_grad_term) hdbar.noalias() = W.leftCols(prev).transpose() * adbar;
    }
  }
}

inline MlpGradients mlp_grad_params(const MlpParams& params, const Eigen::MatrixXd& X,
                                    const LossAdjoints& adj) {
  MlpGradients grads = MlpGradients::zeros_like(params);
  mlp_grad_params_accumulate(params, X, adj, grads);
  return grads;
}

/// Fresh MLP with uniform +-sqrt(6/(fan_in+fan_out)) weights and zero biases.
inline MlpParams make_mlp(int hidden_layers, int hidden_width, double beta,
                          std::uint32_t skip_layer, std::uint64_t seed) {
  if (hidden_layers < 0 || hidden_width < 1)
    throw std::invalid_argument("make_mlp: bad architecture");
  auto rng = make_rng(seed);
  MlpParams params;
  params.beta = beta;
  params.skip_layer = skip_layer;
  int prev = 3;
  for (int l = 0; l < hidden_layers + 1; ++l) {
    int rows = l == hidden_layers ? 1 : hidden_width;
    int cols = prev + (skip_layer == static_cast<std::uint32_t>(l) && l > 0 ? 3 : 0);
    double bound = std::sqrt(6.0 / (cols + rows));
    std::uniform_real_distribution<double> uni(-bound, bound);
    DenseLayer layer;
    layer.weights.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) layer.weights(r, c) = uni(rng);
    layer.biases = Eigen::VectorXd::Zero(rows);
    params.layers.push_back(std::move(layer));
    prev = rows;
  }
  params.validate();
  return params;
}

// --- SDFN binary format -----------------------------------------------------
// little-endian: magic "SDFN", u32 version=1, u32 layer count, per layer
// u32 rows, u32 cols, f64 weights row-major, f64 biases; then f64 beta and
// u32 skip-layer index (0xFFFFFFFF when absent).

inline void write_mlp(const std::string& path, const MlpParams& params) {
  params.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.write("SDFN", 4);
  detail::write_raw<std::uint32_t>(out, 1);
  detail::write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& layer : params.layers) {
    detail::write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(layer.weights.rows()));
    detail::write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(layer.weights.cols()));
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
        detail::write_raw<double>(out, layer.weights(r, c));
    for (Eigen::Index i = 0; i < layer.biases.size(); ++i)
      detail::write_raw<double>(out, layer.biases[i]);
  }
  detail::write_raw<double>(out, params.beta);
  detail::write_raw<std::uint32_t>(out, params.skip_layer);
}

inline MlpParams read_mlp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "SDFN")
    throw std::runtime_error(path + ": not an SDFN file (bad magic)");
  auto version = detail::read_raw<std::uint32_t>(in, "version");
  if (version != 1)
    throw std::runtime_error(path + ": unsupported SDFN version " + std::to_string(version));
  auto count = detail::read_raw<std::uint32_t>(in, "layer count");
  MlpParams params;
  for (std::uint32_t l = 0; l < count; ++l) {
    auto rows = detail::read_raw<std::uint32_t>(in, "layer rows");
    auto cols = detail::read_raw<std::uint32_t>(in, "layer cols");
    DenseLayer layer;
    layer.weights.resize(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c)
        layer.weights(r, c) = detail::read_raw<double>(in, "weights");
    layer.biases.resize(rows);
    for (std::uint32_t i = 0; i < rows; ++i)
      layer.biases[i] = detail::read_raw<double>(in, "biases");
    params.layers.push_back(std::move(layer));
  }
  params.beta = detail::read_raw<double>(in, "beta");
  params.skip_layer = detail::read_raw<std::uint32_t>(in, "skip layer");
  params.validate();
  return params;
}

/// SdfModel adapter over a frozen MLP; batch entry points use the matrix
/// pipeline so the solver's per-iteration evaluations stay vectorized.
class NeuralSdfModel final : public SdfModel {
 public:
  explicit NeuralSdfModel(MlpParams params) : params_(std::move(params)) {
    params_.validate();
  }

  double value(const Eigen::Vector3d& x) const override { return mlp_forward(params_, x); }

  Eigen::Vector3d gradient(const Eigen::Vector3d& x) const override {
    return mlp_grad_input(params_, x);
  }

  void values(std::span<const Eigen::Vector3d> xs, Eigen::VectorXd& out) const override {
    Eigen::MatrixXd X = detail::pack_columns(xs);
    MlpBatchCache cache;
    out = mlp_forward_batch(params_, X, cache).transpose();
  }

  void gradients(std::span<const Eigen::Vector3d> xs,
                 std::vector<Eigen::Vector3d>& out) const override {
    Eigen::MatrixXd X = detail::pack_columns(xs);
    MlpBatchCache cache;
    mlp_forward_batch(params_, X, cache);
    Eigen::MatrixXd G = mlp_input_gradient_batch(params_, X, cache);
    out.resize(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = G.col(static_cast<Eigen::Index>(i));
  }

  const MlpParams& params() const { return params_; }

 private:
  MlpParams params_;
};

}  // namespace sdfreg
