#pragma once

// Labeled template datasets and the probe/template batch sampler used to
// train EvalNet.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "cantrack/aggregation.hpp"
#include "cantrack/error.hpp"
#include "cantrack/types.hpp"

namespace cantrack {

struct LabeledDataset {
  std::vector<GalleryTemplate> templates;  // class_label always set
  std::vector<int> identities;             // original identity per class id
  std::size_t feature_dim = 0;

  std::size_t num_classes() const { return identities.size(); }
};

// Groups labeled detections into per-identity, per-camera runs (a new run
// starts after a gap longer than `max_gap` frames) and deals each run into
// interleaved templates of at most `max_template_len` detections, so every
// template spans the whole run the way a tracked trajectory does.
inline LabeledDataset build_labeled_dataset(std::span<const Detection> detections, std::size_t max_template_len,
                                            std::int64_t max_gap = 5) {
  if (max_template_len == 0) throw ValidationError("max_template_len must be positive");
  std::map<int, int> class_of;
  std::map<std::tuple<int, int>, std::vector<const Detection*>> by_track;
  std::size_t dim = 0;
  for (const auto& det : detections) {
    if (!det.gt_identity) throw ValidationError("training detections must carry gt_identity");
    if (dim == 0) dim = static_cast<std::size_t>(det.feature.size());
    if (static_cast<std::size_t>(det.feature.size()) != dim) throw ShapeError("feature dimension varies");
    class_of.emplace(*det.gt_identity, 0);
    by_track[{*det.gt_identity, det.camera}].push_back(&det);
  }
  LabeledDataset ds;
  ds.feature_dim = dim;
  for (auto& [id, cls] : class_of) {
    cls = static_cast<int>(ds.identities.size());
    ds.identities.push_back(id);
  }
  for (auto& [key, dets] : by_track) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection* a, const Detection* b) { return a->frame < b->frame; });
    std::vector<std::vector<const Detection*>> runs(1);
    for (const Detection* d : dets) {
      if (!runs.back().empty() && d->frame - runs.back().back()->frame > max_gap) runs.emplace_back();
      runs.back().push_back(d);
    }
    for (const auto& run : runs) {
      const std::size_t chunks = (run.size() + max_template_len - 1) / max_template_len;
      for (std::size_t c = 0; c < chunks; ++c) {
        GalleryTemplate t;
        t.features.resize(static_cast<Eigen::Index>((run.size() - c + chunks - 1) / chunks), static_cast<Eigen::Index>(dim));
        Eigen::Index row = 0;
        for (std::size_t k = c; k < run.size(); k += chunks, ++row) {
          t.features.row(row) = run[k]->feature.transpose();
          t.metas.push_back(run[k]->meta());
        }
        t.class_label = class_of.at(std::get<0>(key));
        ds.templates.push_back(std::move(t));
      }
    }
  }
  return ds;
}

struct SamplerConfig {
  std::size_t templates_per_batch = 8;
  std::size_t positives_per_batch = 8;
  std::size_t negatives_per_batch = 0;
  std::uint64_t seed = 0;
};

// Batch k is a pure function of (dataset, config, k), so a resumed training
// run sees exactly the batches an uninterrupted run would have seen.
//
// A batch holds templates of distinct identities. Each positive probe is a
// detection of one gallery identity taken from a different template of that
// identity; each negative probe comes from an identity absent from the
// gallery. Match labels follow identity equality.
class PairSampler {
 public:
  PairSampler(const LabeledDataset& dataset, SamplerConfig cfg) : dataset_(dataset), cfg_(cfg) {
    const std::size_t classes = dataset.num_classes();
    if (classes < 2) throw ValidationError("pair sampler needs at least 2 identities, dataset has " + std::to_string(classes));
    if (cfg.templates_per_batch == 0) throw ValidationError("templates_per_batch must be positive");
    if (cfg.positives_per_batch + cfg.negatives_per_batch == 0) throw ValidationError("batch needs at least one probe");
    if (cfg.positives_per_batch > cfg.templates_per_batch) {
      throw ValidationError("positives_per_batch exceeds templates_per_batch");
    }
    by_class_.resize(classes);
    for (std::size_t t = 0; t < dataset.templates.size(); ++t) {
      by_class_[static_cast<std::size_t>(*dataset.templates[t].class_label)].push_back(t);
    }
    for (std::size_t c = 0; c < classes; ++c) {
      if (by_class_[c].size() >= 2) eligible_.push_back(c);
    }
    const std::size_t needed = cfg.templates_per_batch + (cfg.negatives_per_batch > 0 ? 1 : 0);
    if (classes < needed) {
      throw ValidationError("pair sampler needs " + std::to_string(needed) + " identities, dataset has " +
                            std::to_string(classes));
    }
    if (eligible_.size() < cfg.positives_per_batch) {
      throw ValidationError("only " + std::to_string(eligible_.size()) +
                            " identities have two or more templates; cannot draw " +
                            std::to_string(cfg.positives_per_batch) + " positives");
    }
  }

  TrainBatch batch(std::uint64_t index) const {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::mt19937_64 rng(seq);
    auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

    std::vector<std::size_t> pos_classes = eligible_;
    std::shuffle(pos_classes.begin(), pos_classes.end(), rng);
    pos_classes.resize(cfg_.positives_per_batch);

    std::vector<std::size_t> rest;
    for (std::size_t c = 0; c < by_class_.size(); ++c) {
      if (std::find(pos_classes.begin(), pos_classes.end(), c) == pos_classes.end()) rest.push_back(c);
    }
    std::shuffle(rest.begin(), rest.end(), rng);
    std::vector<std::size_t> gallery_classes = pos_classes;
    const std::size_t fill = cfg_.templates_per_batch - cfg_.positives_per_batch;
    gallery_classes.insert(gallery_classes.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(fill));
    const std::vector<std::size_t> outsiders(rest.begin() + static_cast<std::ptrdiff_t>(fill), rest.end());

    std::vector<std::size_t> template_ids;
    for (std::size_t c : gallery_classes) template_ids.push_back(by_class_[c][pick(by_class_[c].size())]);

    std::vector<std::pair<std::size_t, std::size_t>> probe_src;
    for (std::size_t p = 0; p < cfg_.positives_per_batch; ++p) {
      const auto& pool = by_class_[pos_classes[p]];
      std::size_t t = pool[pick(pool.size() - 1)];
      if (t == template_ids[p]) t = pool.back();
      probe_src.emplace_back(t, pick(dataset_.templates[t].size()));
    }
    for (std::size_t p = 0; p < cfg_.negatives_per_batch; ++p) {
      const std::size_t c = outsiders[pick(outsiders.size())];
      const std::size_t t = by_class_[c][pick(by_class_[c].size())];
      probe_src.emplace_back(t, pick(dataset_.templates[t].size()));
    }

    std::vector<std::size_t> slot_order(template_ids.size());
    std::iota(slot_order.begin(), slot_order.end(), 0);
    std::shuffle(slot_order.begin(), slot_order.end(), rng);
    std::shuffle(probe_src.begin(), probe_src.end(), rng);

    std::vector<GalleryTemplate> templates;
    std::vector<std::size_t> sources;
    for (std::size_t s : slot_order) {
      templates.push_back(dataset_.templates[template_ids[s]]);
      templates.back().trajectory_index = static_cast<int>(templates.size() - 1);
      sources.push_back(template_ids[s]);
    }
    std::vector<ProbeSample> probes;
    for (const auto& [t, k] : probe_src) {
      const auto& src = dataset_.templates[t];
      probes.push_back({src.features.row(static_cast<Eigen::Index>(k)).transpose(), src.metas[k], *src.class_label});
    }
    TrainBatch b = make_batch(templates, probes);
    b.template_sources = std::move(sources);
    b.probe_sources = std::move(probe_src);
    return b;
  }

 private:
  const LabeledDataset& dataset_;
  SamplerConfig cfg_;
  std::vector<std::vector<std::size_t>> by_class_;
  std::vector<std::size_t> eligible_;
};

}  // namespace cantrack
