#pragma once

// Composite Appearance Network head: paired metadata rows, EvalNet scoring,
// weighted template aggregation, and the joint match/classification cost
// used to train EvalNet on batches of variable-length templates.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cantrack/error.hpp"
#include "cantrack/nn.hpp"
#include "cantrack/types.hpp"

namespace cantrack {

inline constexpr std::size_t kMetaWidth = 5;
inline constexpr std::size_t kPairedMetaWidth = 2 * kMetaWidth;

using MetaRow = std::array<double, kMetaWidth>;
using PairedMetaRow = std::array<double, kPairedMetaWidth>;

inline MetaRow normalize_meta(const DetectionMeta& m, const MetaContext& ctx) {
  if (m.cam_id < 1 || m.cam_id > ctx.num_cameras) {
    throw ValidationError("camID " + std::to_string(m.cam_id) + " outside [1, " +
                          std::to_string(ctx.num_cameras) + "]");
  }
  return {m.w / ctx.frame_width, m.h / ctx.frame_height, m.x / ctx.frame_width, m.y / ctx.frame_height,
          static_cast<double>(m.cam_id) / static_cast<double>(ctx.num_cameras)};
}

// One row per gallery detection: [gallery meta | probe meta].
inline std::vector<PairedMetaRow> build_meta_rows(std::span<const DetectionMeta> gallery,
                                                  const DetectionMeta& probe, const MetaContext& ctx) {
  if (gallery.empty()) throw ValidationError("build_meta_rows: empty gallery");
  const MetaRow p = normalize_meta(probe, ctx);
  std::vector<PairedMetaRow> rows;
  rows.reserve(gallery.size());
  for (const auto& g : gallery) {
    const MetaRow gn = normalize_meta(g, ctx);
    PairedMetaRow row{};
    std::copy(gn.begin(), gn.end(), row.begin());
    std::copy(p.begin(), p.end(), row.begin() + kMetaWidth);
    rows.push_back(row);
  }
  return rows;
}

struct GalleryTemplate {
  nn::Matrix features;  // n x d, one row per detection
  std::vector<DetectionMeta> metas;
  int trajectory_index = 0;
  std::optional<int> class_label;

  std::size_t size() const { return metas.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

  void validate() const {
    if (metas.empty()) throw ValidationError("gallery template has no detections");
    if (static_cast<std::size_t>(features.rows()) != metas.size()) {
      throw ValidationError("gallery template: feature and metadata counts differ");
    }
  }
};

struct ProbeSample {
  FeatureVector feature;
  DetectionMeta meta;
  int class_label = 0;
};

// EvalNet input rows [g_k | gallery meta_k | probe meta].
inline nn::Matrix evalnet_input(const nn::Matrix& features, std::span<const DetectionMeta> metas,
                                const DetectionMeta& probe, const MetaContext& ctx) {
  const auto rows = build_meta_rows(metas, probe, ctx);
  const auto d = features.cols();
  nn::Matrix x(features.rows(), d + static_cast<Eigen::Index>(kPairedMetaWidth));
  x.leftCols(d) = features;
  for (Eigen::Index k = 0; k < x.rows(); ++k) {
    for (std::size_t c = 0; c < kPairedMetaWidth; ++c) x(k, d + static_cast<Eigen::Index>(c)) = rows[k][c];
  }
  return x;
}

// Importance weights for a template given the probe's metadata; always on
// the simplex.
inline nn::Vector evalnet_weights(const GalleryTemplate& tmpl, const DetectionMeta& probe_meta,
                                  const nn::MlpParams& params, const MetaContext& ctx) {
  tmpl.validate();
  if (params.input_width() != tmpl.dim() + kPairedMetaWidth) {
    throw ContractError("EvalNet expects input width " + std::to_string(params.input_width()) +
                        ", template provides " + std::to_string(tmpl.dim() + kPairedMetaWidth));
  }
  const nn::Matrix x = evalnet_input(tmpl.features, tmpl.metas, probe_meta, ctx);
  return nn::softmax_normalize(nn::mlp_forward(params, x, nn::Mode::kInfer).logits);
}

inline nn::Vector uniform_weights(std::size_t n) {
  if (n == 0) throw DomainError("uniform weights over an empty template");
  return nn::Vector::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n));
}

// F = sum_k e_k g_k
inline FeatureVector aggregate_template(const nn::Matrix& features, const nn::Vector& weights) {
  if (features.rows() != weights.size()) throw ContractError("aggregate_template: weight count mismatch");
  if (weights.size() == 0) throw ContractError("aggregate_template: empty template");
  if ((weights.array() < -1e-12).any() || std::abs(weights.sum() - 1.0) > 1e-6) {
    throw ContractError("aggregate_template: weights are not on the simplex");
  }
  return features.transpose() * weights;
}

inline double cosine_similarity(const FeatureVector& a, const FeatureVector& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw DomainError("cosine_similarity: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

inline double mse_match_loss(const FeatureVector& probe, const FeatureVector& aggregate, double match) {
  const double c = cosine_similarity(probe, aggregate);
  return (c - match) * (c - match);
}

struct ClassifierHead {
  nn::Matrix weight;  // C x d
  nn::Vector bias;

  std::size_t num_classes() const { return static_cast<std::size_t>(weight.rows()); }

  nn::TensorList tensors() { return {nn::flat(weight), nn::flat(bias)}; }
};

inline ClassifierHead make_head(std::size_t classes, std::size_t dim, std::uint64_t seed) {
  if (classes == 0 || dim == 0) throw ShapeError("classifier head needs classes and a feature dimension");
  std::mt19937_64 rng(seed);
  const double scale = std::sqrt(6.0 / static_cast<double>(classes + dim));
  std::uniform_real_distribution<double> uni(-scale, scale);
  ClassifierHead h;
  h.weight.resize(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(dim));
  for (Eigen::Index k = 0; k < h.weight.size(); ++k) h.weight.data()[k] = uni(rng);
  h.bias = nn::Vector::Zero(static_cast<Eigen::Index>(classes));
  return h;
}

inline nn::Vector class_probabilities(const ClassifierHead& head, const FeatureVector& f) {
  if (f.size() != head.weight.cols()) throw ShapeError("classifier head: feature dimension mismatch");
  return nn::softmax_normalize(head.weight * f + head.bias);
}

inline double cce_loss(const ClassifierHead& head, const FeatureVector& f, int class_label) {
  if (class_label < 0 || static_cast<std::size_t>(class_label) >= head.num_classes()) {
    throw ValidationError("class label " + std::to_string(class_label) + " outside [0, " +
                          std::to_string(head.num_classes()) + ")");
  }
  const nn::Vector logits = head.weight * f + head.bias;
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return lse - logits(class_label);
}

// EvalNet plus classifier head plus the metadata scales they were trained with.
struct CanModel {
  nn::MlpParams evalnet;
  ClassifierHead head;
  MetaContext meta;

  nn::TensorList tensors() {
    auto t = evalnet.tensors();
    for (auto s : head.tensors()) t.push_back(s);
    return t;
  }
};

struct CanGradients {
  nn::MlpGradients evalnet;
  nn::Matrix head_weight;
  nn::Vector head_bias;

  nn::TensorList tensors() {
    auto t = evalnet.tensors();
    t.push_back(nn::flat(head_weight));
    t.push_back(nn::flat(head_bias));
    return t;
  }
};

inline CanGradients zero_gradients(const CanModel& model) {
  return {nn::zero_gradients(model.evalnet), nn::Matrix::Zero(model.head.weight.rows(), model.head.weight.cols()),
          nn::Vector::Zero(model.head.bias.size())};
}

// Default EvalNet widths in -> 256 -> 128 -> 64 -> 1.
inline CanModel make_can_model(std::size_t feature_dim, std::size_t classes, const MetaContext& meta,
                               std::uint64_t seed, std::array<std::size_t, 3> hidden = {256, 128, 64}) {
  const std::vector<std::size_t> dims{feature_dim + kPairedMetaWidth, hidden[0], hidden[1], hidden[2], 1};
  return {nn::make_mlp(std::span<const std::size_t>(dims), seed), make_head(classes, feature_dim, seed ^ 0x9e3779b97f4a7c15ULL),
          meta};
}

// Stacked detections of m_g templates; r[k] names the template slot that row
// k belongs to. Y(i, j) is the match label of probe i against template j.
struct TrainBatch {
  nn::Matrix gallery_features;  // N x d
  std::vector<DetectionMeta> gallery_metas;
  std::vector<int> r;
  std::vector<int> template_labels;  // m_g class ids

  nn::Matrix probe_features;  // m_p x d
  std::vector<DetectionMeta> probe_metas;
  std::vector<int> probe_labels;
  nn::Matrix match;  // m_p x m_g

  // Provenance, used only for auditing samplers.
  std::vector<std::size_t> template_sources;
  std::vector<std::pair<std::size_t, std::size_t>> probe_sources;

  std::size_t num_templates() const { return template_labels.size(); }
  std::size_t num_probes() const { return probe_metas.size(); }
};

inline TrainBatch make_batch(std::span<const GalleryTemplate> templates, std::span<const ProbeSample> probes) {
  if (templates.empty() || probes.empty()) throw DomainError("batch needs at least one template and one probe");
  TrainBatch b;
  const auto d = static_cast<Eigen::Index>(templates.front().dim());
  std::size_t total = 0;
  for (const auto& t : templates) {
    t.validate();
    if (!t.class_label) throw ValidationError("training templates need a class label");
    if (static_cast<Eigen::Index>(t.dim()) != d) throw ShapeError("templates differ in feature dimension");
    total += t.size();
  }
  b.gallery_features.resize(static_cast<Eigen::Index>(total), d);
  Eigen::Index row = 0;
  for (std::size_t j = 0; j < templates.size(); ++j) {
    const auto& t = templates[j];
    b.gallery_features.middleRows(row, t.features.rows()) = t.features;
    row += t.features.rows();
    b.gallery_metas.insert(b.gallery_metas.end(), t.metas.begin(), t.metas.end());
    b.r.insert(b.r.end(), t.size(), static_cast<int>(j));
    b.template_labels.push_back(*t.class_label);
  }
  b.probe_features.resize(static_cast<Eigen::Index>(probes.size()), d);
  b.match.resize(static_cast<Eigen::Index>(probes.size()), static_cast<Eigen::Index>(templates.size()));
  for (std::size_t i = 0; i < probes.size(); ++i) {
    if (probes[i].feature.size() != d) throw ShapeError("probe feature dimension mismatch");
    b.probe_features.row(static_cast<Eigen::Index>(i)) = probes[i].feature.transpose();
    b.probe_metas.push_back(probes[i].meta);
    b.probe_labels.push_back(probes[i].class_label);
    for (std::size_t j = 0; j < templates.size(); ++j) {
      b.match(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          probes[i].class_label == *templates[j].class_label ? 1.0 : 0.0;
    }
  }
  return b;
}

struct CostEvaluation {
  double cost = 0.0;
  std::optional<CanGradients> gradients;
  nn::ForwardCache cache;
};

namespace detail {

inline std::vector<std::vector<Eigen::Index>> rows_by_template(const TrainBatch& b) {
  const auto m_g = b.num_templates();
  if (b.r.size() != b.gallery_metas.size() || static_cast<Eigen::Index>(b.r.size()) != b.gallery_features.rows()) {
    throw ValidationError("batch: every gallery row needs a trajectory index");
  }
  std::vector<std::vector<Eigen::Index>> rows(m_g);
  for (std::size_t k = 0; k < b.r.size(); ++k) {
    if (b.r[k] < 0 || static_cast<std::size_t>(b.r[k]) >= m_g) {
      throw ValidationError("batch: trajectory index " + std::to_string(b.r[k]) + " has no template slot");
    }
    rows[static_cast<std::size_t>(b.r[k])].push_back(static_cast<Eigen::Index>(k));
  }
  for (std::size_t j = 0; j < m_g; ++j) {
    if (rows[j].empty()) throw ValidationError("batch: trajectory index " + std::to_string(j) + " has no detections");
  }
  return rows;
}

}  // namespace detail

// J = 1/(m_p m_g) sum_i sum_j [ L_mse(i, j) + L_cce(j) ], where template j is
// aggregated with weights conditioned on probe i and the classifier sees that
// probe-conditioned aggregate. Gradients cover EvalNet and the head.
inline CostEvaluation evaluate_batch_cost(const TrainBatch& b, const CanModel& model, nn::Mode mode,
                                          bool want_gradients) {
  const auto m_p = b.num_probes();
  const auto m_g = b.num_templates();
  if (m_p == 0 || m_g == 0) throw DomainError("batch cost over an empty probe or gallery set");
  if (b.match.rows() != static_cast<Eigen::Index>(m_p) || b.match.cols() != static_cast<Eigen::Index>(m_g)) {
    throw ValidationError("batch: match labels must cover every probe/template pair");
  }
  for (int label : b.template_labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= model.head.num_classes()) {
      throw ValidationError("batch: template class label " + std::to_string(label) + " out of range");
    }
  }
  const auto rows = detail::rows_by_template(b);
  const auto d = b.gallery_features.cols();
  const auto in_width = d + static_cast<Eigen::Index>(kPairedMetaWidth);
  if (model.evalnet.input_width() != static_cast<std::size_t>(in_width)) {
    throw ContractError("EvalNet input width does not match batch feature dimension");
  }

  std::vector<MetaRow> gallery_meta(b.gallery_metas.size());
  for (std::size_t k = 0; k < gallery_meta.size(); ++k) gallery_meta[k] = normalize_meta(b.gallery_metas[k], model.meta);

  // Segment (i, j) occupies rows [offset(i, j), offset(i, j) + n_j).
  const auto per_probe = static_cast<Eigen::Index>(b.r.size());
  nn::Matrix x(per_probe * static_cast<Eigen::Index>(m_p), in_width);
  std::vector<Eigen::Index> offset(m_p * m_g);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < m_p; ++i) {
    const MetaRow pm = normalize_meta(b.probe_metas[i], model.meta);
    for (std::size_t j = 0; j < m_g; ++j) {
      offset[i * m_g + j] = row;
      for (Eigen::Index k : rows[j]) {
        x.row(row).head(d) = b.gallery_features.row(k);
        for (std::size_t c = 0; c < kMetaWidth; ++c) {
          x(row, d + static_cast<Eigen::Index>(c)) = gallery_meta[static_cast<std::size_t>(k)][c];
          x(row, d + static_cast<Eigen::Index>(kMetaWidth + c)) = pm[c];
        }
        ++row;
      }
    }
  }

  auto fwd = nn::mlp_forward(model.evalnet, x, mode);
  const double scale = 1.0 / static_cast<double>(m_p * m_g);

  CostEvaluation out;
  nn::Vector d_logits;
  CanGradients grads;
  if (want_gradients) {
    d_logits = nn::Vector::Zero(x.rows());
    grads.head_weight = nn::Matrix::Zero(model.head.weight.rows(), model.head.weight.cols());
    grads.head_bias = nn::Vector::Zero(model.head.bias.size());
  }

  double total = 0.0;
  for (std::size_t i = 0; i < m_p; ++i) {
    const FeatureVector probe = b.probe_features.row(static_cast<Eigen::Index>(i)).transpose();
    const double probe_norm = probe.norm();
    if (probe_norm == 0.0) throw DomainError("batch cost: zero probe feature");
    for (std::size_t j = 0; j < m_g; ++j) {
      const auto& idx = rows[j];
      const auto n = static_cast<Eigen::Index>(idx.size());
      const Eigen::Index off = offset[i * m_g + j];
      const nn::Vector w = nn::softmax_normalize(fwd.logits.segment(off, n));
      FeatureVector f = FeatureVector::Zero(d);
      for (Eigen::Index k = 0; k < n; ++k) f += w(k) * b.gallery_features.row(idx[static_cast<std::size_t>(k)]).transpose();
      const double f_norm = f.norm();
      if (f_norm == 0.0) throw DomainError("batch cost: aggregated feature is zero");

      const double y = b.match(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      const double cos = probe.dot(f) / (probe_norm * f_norm);
      const double l_mse = (cos - y) * (cos - y);

      const int label = b.template_labels[j];
      const nn::Vector logits = model.head.weight * f + model.head.bias;
      const nn::Vector q = nn::softmax_normalize(logits);
      const double m = logits.maxCoeff();
      const double l_cce = m + std::log((logits.array() - m).exp().sum()) - logits(label);
      total += l_mse + l_cce;

      if (!want_gradients) continue;
      // dL/dF from both terms.
      FeatureVector d_f = (2.0 * (cos - y) * scale) * (probe / (probe_norm * f_norm) - cos * f / (f_norm * f_norm));
      nn::Vector d_head_logits = q;
      d_head_logits(label) -= 1.0;
      d_head_logits *= scale;
      grads.head_weight += d_head_logits * f.transpose();
      grads.head_bias += d_head_logits;
      d_f += model.head.weight.transpose() * d_head_logits;
      // Through F = sum w_k g_k and the softmax.
      nn::Vector d_w(n);
      for (Eigen::Index k = 0; k < n; ++k) d_w(k) = b.gallery_features.row(idx[static_cast<std::size_t>(k)]).dot(d_f);
      const double mean_dw = w.dot(d_w);
      d_logits.segment(off, n) = w.array() * (d_w.array() - mean_dw);
    }
  }
  out.cost = total * scale;
  if (want_gradients) {
    grads.evalnet = nn::backprop(model.evalnet, fwd.cache, d_logits);
    out.gradients = std::move(grads);
  }
  out.cache = std::move(fwd.cache);
  return out;
}

inline double batch_cost(const TrainBatch& b, const CanModel& model, nn::Mode mode = nn::Mode::kTrain) {
  return evaluate_batch_cost(b, model, mode, false).cost;
}

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
};

struct OptimizerState {
  CanGradients velocity;
  std::uint64_t step = 0;
};

inline OptimizerState make_optimizer_state(const CanModel& model) { return {zero_gradients(model), 0}; }

// One forward/backward pass on the batch, commits batch-norm statistics and
// applies one momentum step. Returns the pre-step cost.
inline double train_step(const TrainBatch& b, CanModel& model, OptimizerState& state, const TrainConfig& cfg) {
  auto eval = evaluate_batch_cost(b, model, nn::Mode::kTrain, true);
  nn::update_running_stats(model.evalnet, eval.cache);
  auto params = model.tensors();
  auto grads = eval.gradients->tensors();
  nn::sgd_momentum_step(params, nn::as_const(grads), cfg.lr, cfg.momentum, state.velocity.tensors());
  ++state.step;
  return eval.cost;
}

}  // namespace cantrack
