#pragma once

// Minimal feed-forward engine for the EvalNet scorer: affine layers with
// batch normalization and ReLU, exact reverse-mode gradients, momentum SGD
// and a central-difference gradient checker.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cantrack/error.hpp"

namespace cantrack::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Mode { kTrain, kInfer };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr std::size_t kNumLayers = 4;

// Trainable tensors are exposed as flat spans so that optimizers and the
// gradient checker can walk parameters and gradients in lockstep.
using TensorList = std::vector<std::span<double>>;
using ConstTensorList = std::vector<std::span<const double>>;

inline std::span<double> flat(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<double> flat(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

inline ConstTensorList as_const(const TensorList& list) {
  return ConstTensorList(list.begin(), list.end());
}

struct LayerParams {
  Matrix weight;  // out x in
  Vector bias;
  // Empty for the output layer, which has no normalization.
  Vector bn_gamma;
  Vector bn_beta;
  Vector bn_running_mean;
  Vector bn_running_var;

  std::size_t in_width() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_width() const { return static_cast<std::size_t>(weight.rows()); }
  bool has_batch_norm() const { return bn_gamma.size() > 0; }
};

struct MlpParams {
  std::vector<LayerParams> layers;

  std::size_t input_width() const { return layers.empty() ? 0 : layers.front().in_width(); }

  // [in, h1, h2, h3, 1]
  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> out;
    if (layers.empty()) return out;
    out.push_back(layers.front().in_width());
    for (const auto& l : layers) out.push_back(l.out_width());
    return out;
  }

  TensorList tensors() {
    TensorList out;
    for (auto& l : layers) {
      out.push_back(flat(l.weight));
      out.push_back(flat(l.bias));
      if (l.has_batch_norm()) {
        out.push_back(flat(l.bn_gamma));
        out.push_back(flat(l.bn_beta));
      }
    }
    return out;
  }
};

struct LayerGrad {
  Matrix weight;
  Vector bias;
  Vector bn_gamma;
  Vector bn_beta;
};

// Mirrors MlpParams tensor-for-tensor; `input` holds d(loss)/d(X).
struct MlpGradients {
  std::vector<LayerGrad> layers;
  Matrix input;

  TensorList tensors() {
    TensorList out;
    for (auto& l : layers) {
      out.push_back(flat(l.weight));
      out.push_back(flat(l.bias));
      if (l.bn_gamma.size() > 0) {
        out.push_back(flat(l.bn_gamma));
        out.push_back(flat(l.bn_beta));
      }
    }
    return out;
  }
};

inline MlpGradients zero_gradients(const MlpParams& params) {
  MlpGradients g;
  for (const auto& l : params.layers) {
    LayerGrad lg;
    lg.weight = Matrix::Zero(l.weight.rows(), l.weight.cols());
    lg.bias = Vector::Zero(l.bias.size());
    lg.bn_gamma = Vector::Zero(l.bn_gamma.size());
    lg.bn_beta = Vector::Zero(l.bn_beta.size());
    g.layers.push_back(std::move(lg));
  }
  return g;
}

inline void validate(const MlpParams& params) {
  if (params.layers.size() != kNumLayers) {
    throw ShapeError("mlp must have exactly 4 layers, got " + std::to_string(params.layers.size()));
  }
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    const auto out = l.weight.rows();
    if (l.bias.size() != out) throw ShapeError("layer " + std::to_string(i) + ": bias width mismatch");
    const bool want_bn = i + 1 < params.layers.size();
    if (want_bn) {
      if (l.bn_gamma.size() != out || l.bn_beta.size() != out || l.bn_running_mean.size() != out ||
          l.bn_running_var.size() != out) {
        throw ShapeError("layer " + std::to_string(i) + ": batch-norm width mismatch");
      }
      if ((l.bn_running_var.array() < 0.0).any()) {
        throw ValidationError("layer " + std::to_string(i) + ": negative running variance");
      }
    } else if (l.has_batch_norm()) {
      throw ShapeError("output layer must not carry batch norm");
    }
    if (i > 0 && params.layers[i - 1].out_width() != l.in_width()) {
      throw ShapeError("layer " + std::to_string(i) + ": input width does not chain");
    }
    if (!l.weight.allFinite() || !l.bias.allFinite()) {
      throw ValidationError("layer " + std::to_string(i) + ": non-finite parameters");
    }
  }
  if (params.layers.back().out_width() != 1) throw ShapeError("output layer must emit one logit");
}

// Glorot-uniform weights, zero biases, identity batch norm.
inline MlpParams make_mlp(std::span<const std::size_t> dims, std::uint64_t seed) {
  if (dims.size() != kNumLayers + 1) throw ShapeError("dims must list in, h1, h2, h3, 1");
  if (dims.back() != 1) throw ShapeError("final width must be 1");
  for (auto d : dims) {
    if (d == 0) throw ShapeError("zero layer width");
  }
  std::mt19937_64 rng(seed);
  MlpParams p;
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    const auto in = static_cast<Eigen::Index>(dims[i]);
    const auto out = static_cast<Eigen::Index>(dims[i + 1]);
    const double scale = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> uni(-scale, scale);
    LayerParams l;
    l.weight.resize(out, in);
    for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] = uni(rng);
    l.bias = Vector::Zero(out);
    if (i + 1 < kNumLayers) {
      l.bn_gamma = Vector::Ones(out);
      l.bn_beta = Vector::Zero(out);
      l.bn_running_mean = Vector::Zero(out);
      l.bn_running_var = Vector::Ones(out);
    }
    p.layers.push_back(std::move(l));
  }
  return p;
}

inline MlpParams make_mlp(std::initializer_list<std::size_t> dims, std::uint64_t seed) {
  std::vector<std::size_t> v(dims);
  return make_mlp(std::span<const std::size_t>(v), seed);
}

// y = x W^T + b
inline Matrix affine(const Matrix& x, const LayerParams& layer) {
  if (static_cast<std::size_t>(x.cols()) != layer.in_width()) {
    throw ShapeError("affine: input has " + std::to_string(x.cols()) + " columns, layer expects " +
                     std::to_string(layer.in_width()));
  }
  Matrix y = x * layer.weight.transpose();
  y.rowwise() += layer.bias.transpose();
  return y;
}

inline Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

inline Vector softmax_normalize(const Vector& logits) {
  if (logits.size() == 0) throw DomainError("softmax of an empty vector");
  if (!logits.allFinite()) throw DomainError("softmax of non-finite logits");
  Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

namespace detail {

struct NormStats {
  Vector mean;
  Vector var;  // biased
  bool from_batch = false;
};

inline NormStats norm_stats(const Matrix& x, const LayerParams& layer, Mode mode) {
  NormStats s;
  if (mode == Mode::kTrain && x.rows() >= 2) {
    s.mean = x.colwise().mean().transpose();
    s.var = (x.rowwise() - s.mean.transpose()).array().square().colwise().mean().transpose();
    s.from_batch = true;
  } else {
    s.mean = layer.bn_running_mean;
    s.var = layer.bn_running_var;
  }
  return s;
}

inline void blend_running(LayerParams& layer, const NormStats& s, Eigen::Index rows, double momentum) {
  if (!s.from_batch) return;
  const double n = static_cast<double>(rows);
  const Vector unbiased = s.var * (n / (n - 1.0));
  layer.bn_running_mean = (1.0 - momentum) * layer.bn_running_mean + momentum * s.mean;
  layer.bn_running_var = (1.0 - momentum) * layer.bn_running_var + momentum * unbiased;
}

}  // namespace detail

// Normalizes each column. Train mode uses batch statistics (and folds them into
// the running estimates); a single-row train batch falls back to the running
// statistics because one sample has no variance.
inline Matrix batch_norm(const Matrix& x, LayerParams& layer, Mode mode, double eps = kBatchNormEps) {
  if (!layer.has_batch_norm() || static_cast<std::size_t>(x.cols()) != layer.out_width()) {
    throw ShapeError("batch_norm: width mismatch");
  }
  if (x.rows() < 1) throw ShapeError("batch_norm: empty batch");
  const auto s = detail::norm_stats(x, layer, mode);
  const Vector inv_std = (s.var.array() + eps).rsqrt();
  Matrix y = ((x.rowwise() - s.mean.transpose()).array().rowwise() * inv_std.transpose().array()).matrix();
  y = (y.array().rowwise() * layer.bn_gamma.transpose().array()).matrix();
  y.rowwise() += layer.bn_beta.transpose();
  if (mode == Mode::kTrain) detail::blend_running(layer, s, x.rows(), kBatchNormMomentum);
  return y;
}

struct LayerCache {
  Matrix input;
  Matrix xhat;      // normalized pre-activation (BN layers only)
  Vector inv_std;
  Matrix activated;  // post-ReLU output (BN layers only)
  detail::NormStats stats;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::vector<std::size_t> dims;
  Eigen::Index rows = 0;
  Mode mode = Mode::kInfer;
};

struct ForwardResult {
  Vector logits;
  ForwardCache cache;
};

// affine -> batch_norm -> relu on every hidden layer, affine only on the last.
// Parameters are not touched; call update_running_stats to commit train-mode
// batch statistics.
inline ForwardResult mlp_forward(const MlpParams& params, const Matrix& x, Mode mode,
                                 double eps = kBatchNormEps) {
  validate(params);
  if (x.rows() < 1) throw ShapeError("mlp_forward: empty batch");
  ForwardResult out;
  out.cache.dims = params.dims();
  out.cache.rows = x.rows();
  out.cache.mode = mode;
  Matrix h = x;
  for (const auto& layer : params.layers) {
    LayerCache lc;
    Matrix a = affine(h, layer);
    lc.input = std::move(h);
    if (layer.has_batch_norm()) {
      lc.stats = detail::norm_stats(a, layer, mode);
      lc.inv_std = (lc.stats.var.array() + eps).rsqrt();
      lc.xhat = ((a.rowwise() - lc.stats.mean.transpose()).array().rowwise() *
                 lc.inv_std.transpose().array())
                    .matrix();
      Matrix z = (lc.xhat.array().rowwise() * layer.bn_gamma.transpose().array()).matrix();
      z.rowwise() += layer.bn_beta.transpose();
      lc.activated = relu(z);
      h = lc.activated;
    } else {
      h = std::move(a);
    }
    out.cache.layers.push_back(std::move(lc));
  }
  out.logits = h.col(0);
  return out;
}

inline void update_running_stats(MlpParams& params, const ForwardCache& cache,
                                 double momentum = kBatchNormMomentum) {
  if (cache.layers.size() != params.layers.size()) throw ContractError("cache does not match params");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    if (params.layers[i].has_batch_norm()) {
      detail::blend_running(params.layers[i], cache.layers[i].stats, cache.rows, momentum);
    }
  }
}

// Reverse-mode gradients of a scalar loss given d(loss)/d(logits).
inline MlpGradients backprop(const MlpParams& params, const ForwardCache& cache, const Vector& upstream) {
  if (cache.dims != params.dims() || cache.layers.size() != params.layers.size()) {
    throw ContractError("backprop: cache was produced by a different network");
  }
  if (upstream.size() != cache.rows) {
    throw ContractError("backprop: upstream has " + std::to_string(upstream.size()) + " rows, cache has " +
                        std::to_string(cache.rows));
  }
  MlpGradients g = zero_gradients(params);
  Matrix d_out = upstream;  // n x 1
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& layer = params.layers[li];
    const auto& lc = cache.layers[li];
    auto& lg = g.layers[li];
    Matrix d_affine;
    if (layer.has_batch_norm()) {
      Matrix dz = (d_out.array() * (lc.activated.array() > 0.0).cast<double>()).matrix();
      lg.bn_beta = dz.colwise().sum().transpose();
      lg.bn_gamma = (dz.array() * lc.xhat.array()).colwise().sum().transpose();
      Matrix dxhat = (dz.array().rowwise() * layer.bn_gamma.transpose().array()).matrix();
      if (lc.stats.from_batch) {
        const double n = static_cast<double>(cache.rows);
        const Vector sum_dxhat = dxhat.colwise().sum().transpose();
        const Vector sum_dxhat_xhat = (dxhat.array() * lc.xhat.array()).colwise().sum().transpose();
        Matrix t = n * dxhat;
        t.rowwise() -= sum_dxhat.transpose();
        t -= (lc.xhat.array().rowwise() * sum_dxhat_xhat.transpose().array()).matrix();
        d_affine = (t.array().rowwise() * (lc.inv_std.transpose().array() / n)).matrix();
      } else {
        d_affine = (dxhat.array().rowwise() * lc.inv_std.transpose().array()).matrix();
      }
    } else {
      d_affine = std::move(d_out);
    }
    lg.weight = d_affine.transpose() * lc.input;
    lg.bias = d_affine.colwise().sum().transpose();
    d_out = d_affine * layer.weight;
  }
  g.input = std::move(d_out);
  return g;
}

struct GradientCheckReport {
  double max_relative_error = 0.0;
  bool finite = true;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
};

// Central differences over every entry of `params`, compared against
// `analytic` (same tensor layout). Relative error per entry is
// |a - n| / max(1e-8, |a| + |n|). Entries are restored after probing.
template <class LossFn>
GradientCheckReport finite_difference_check(const TensorList& params, const ConstTensorList& analytic,
                                            LossFn&& loss, double step) {
  if (!(step > 0.0)) throw DomainError("finite difference step must be positive");
  if (params.size() != analytic.size()) throw ContractError("gradient layout does not match parameters");
  GradientCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != analytic[t].size()) throw ContractError("gradient tensor size mismatch");
    for (std::size_t k = 0; k < params[t].size(); ++k) {
      double& theta = params[t][k];
      const double saved = theta;
      theta = saved + step;
      const double up = loss();
      theta = saved - step;
      const double down = loss();
      theta = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        report.finite = false;
        report.max_relative_error = std::numeric_limits<double>::infinity();
        report.worst_tensor = t;
        report.worst_index = k;
        return report;
      }
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[t][k];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_tensor = t;
        report.worst_index = k;
      }
    }
  }
  return report;
}

// v <- momentum * v - lr * g;  theta <- theta + v
inline void sgd_momentum_step(const TensorList& params, const ConstTensorList& grads, double lr,
                              double momentum, const TensorList& velocity) {
  if (!(lr >= 0.0)) throw ValidationError("learning rate must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw ContractError("sgd: parameter, gradient and velocity layouts differ");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size() || params[t].size() != velocity[t].size()) {
      throw ContractError("sgd: tensor " + std::to_string(t) + " shape mismatch");
    }
    for (std::size_t k = 0; k < params[t].size(); ++k) {
      velocity[t][k] = momentum * velocity[t][k] - lr * grads[t][k];
      params[t][k] += velocity[t][k];
    }
  }
}

}  // namespace cantrack::nn
