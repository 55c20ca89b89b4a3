#pragma once

// Tracking measures: Inference Error over association-event logs, identity
// precision/recall/F1 under an optimal identity matching, MOTA and MCTA.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "cantrack/assignment.hpp"
#include "cantrack/association.hpp"
#include "cantrack/error.hpp"
#include "cantrack/types.hpp"

namespace cantrack {

struct Observation {
  int identity = 0;
  BBox box;
};

// Boxes per (camera, frame), at most one per identity.
class TrackLog {
 public:
  using Key = std::pair<int, std::int64_t>;

  void add(int camera, std::int64_t frame, int identity, const BBox& box) {
    auto& obs = frames_[{camera, frame}];
    for (const auto& o : obs) {
      if (o.identity == identity) {
        throw ValidationError("identity " + std::to_string(identity) + " appears twice in camera " +
                              std::to_string(camera) + " frame " + std::to_string(frame));
      }
    }
    obs.push_back({identity, box});
    ++size_;
  }

  const std::map<Key, std::vector<Observation>>& frames() const { return frames_; }
  std::size_t size() const { return size_; }

  std::vector<int> identities() const {
    std::set<int> ids;
    for (const auto& [k, obs] : frames_) {
      for (const auto& o : obs) ids.insert(o.identity);
    }
    return {ids.begin(), ids.end()};
  }

 private:
  std::map<Key, std::vector<Observation>> frames_;
  std::size_t size_ = 0;
};

using GroundTruthLog = TrackLog;
using HypothesisLog = TrackLog;

// ---------------------------------------------------------------- IE

// Gallery reconstruction for misassociation judgement. A track is labeled
// with the ground-truth identity of its first detection.
class GalleryReplay {
 public:
  // Returns true when the event is a misassociation, then applies it.
  bool apply(const AssociationEvent& ev, int truth) {
    bool wrong = false;
    if (ev.decision == Decision::kMatched) {
      auto it = label_.find(ev.track_id);
      if (it == label_.end()) {
        throw ValidationError("event at time " + std::to_string(ev.time) + " matches unknown track " +
                              std::to_string(ev.track_id));
      }
      const bool never_seen = seen_.count(truth) == 0;
      wrong = it->second != truth || never_seen;
    } else {
      if (label_.count(ev.track_id)) {
        throw ValidationError("event at time " + std::to_string(ev.time) + " reopens existing track " +
                              std::to_string(ev.track_id));
      }
      wrong = seen_.count(truth) > 0;
      label_.emplace(ev.track_id, truth);
    }
    seen_.insert(truth);
    return wrong;
  }

 private:
  std::map<int, int> label_;
  std::set<int> seen_;
};

using IdentityLookup = std::map<std::int64_t, int>;  // feature_id -> gt identity

inline int truth_of(const AssociationEvent& ev, const IdentityLookup& gt) {
  auto it = gt.find(ev.feature_id);
  if (it == gt.end()) {
    throw ValidationError("detection " + std::to_string(ev.feature_id) + " has no ground-truth identity");
  }
  return it->second;
}

// Misassociations among one timestep's events, advancing `gallery`.
inline std::size_t misassociation_count(std::span<AssociationEvent> events_at_t, GalleryReplay& gallery,
                                        const IdentityLookup& gt) {
  std::size_t m = 0;
  for (auto& ev : events_at_t) {
    const bool wrong = gallery.apply(ev, truth_of(ev, gt));
    ev.correct = !wrong;
    if (wrong) ++m;
  }
  return m;
}

struct IeStep {
  std::int64_t time = 0;
  std::size_t misassociations = 0;
  std::size_t detections = 0;
};

struct InferenceErrorResult {
  double value = 0.0;
  std::vector<IeStep> steps;
  std::vector<AssociationEvent> annotated;
};

// E = (1/T) sum_t M_t / D_t over timesteps that carry detections.
inline InferenceErrorResult inference_error(std::span<const AssociationEvent> log, const IdentityLookup& gt) {
  if (log.empty()) throw DomainError("inference error of an empty event log");
  InferenceErrorResult out;
  out.annotated.assign(log.begin(), log.end());
  for (std::size_t k = 1; k < out.annotated.size(); ++k) {
    if (out.annotated[k].time < out.annotated[k - 1].time) {
      throw ValidationError("event log times decrease at entry " + std::to_string(k));
    }
  }
  GalleryReplay gallery;
  double sum = 0.0;
  std::size_t pos = 0;
  while (pos < out.annotated.size()) {
    std::size_t stop = pos;
    while (stop < out.annotated.size() && out.annotated[stop].time == out.annotated[pos].time) ++stop;
    std::span<AssociationEvent> step(out.annotated.data() + pos, stop - pos);
    const std::size_t m = misassociation_count(step, gallery, gt);
    out.steps.push_back({out.annotated[pos].time, m, stop - pos});
    sum += static_cast<double>(m) / static_cast<double>(stop - pos);
    pos = stop;
  }
  out.value = sum / static_cast<double>(out.steps.size());
  return out;
}

// ---------------------------------------------------------------- ID measures

struct IdMeasures {
  double idp = 0.0;
  double idr = 0.0;
  double idf1 = 0.0;
  std::int64_t idtp = 0;
  std::int64_t idfp = 0;
  std::int64_t idfn = 0;
};

// Count of (camera, frame) co-occurrences with IoU >= 0.5 for each
// truth/hypothesis identity pair.
inline WeightMatrix identity_overlap(const GroundTruthLog& gt, const HypothesisLog& hyp, const std::vector<int>& gt_ids,
                                     const std::vector<int>& hyp_ids) {
  std::map<int, std::size_t> gi, hi;
  for (std::size_t k = 0; k < gt_ids.size(); ++k) gi[gt_ids[k]] = k;
  for (std::size_t k = 0; k < hyp_ids.size(); ++k) hi[hyp_ids[k]] = k;
  WeightMatrix w(gt_ids.size(), std::vector<std::int64_t>(hyp_ids.size(), 0));
  for (const auto& [key, truths] : gt.frames()) {
    auto it = hyp.frames().find(key);
    if (it == hyp.frames().end()) continue;
    for (const auto& g : truths) {
      for (const auto& h : it->second) {
        if (iou(g.box, h.box) >= kIouGate) ++w[gi.at(g.identity)][hi.at(h.identity)];
      }
    }
  }
  return w;
}

inline double safe_ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

inline IdMeasures id_measures(const GroundTruthLog& gt, const HypothesisLog& hyp) {
  const auto gt_ids = gt.identities();
  const auto hyp_ids = hyp.identities();
  const auto w = identity_overlap(gt, hyp, gt_ids, hyp_ids);
  const auto best = max_weight_assignment(w);
  IdMeasures m;
  m.idtp = best.total;
  m.idfn = static_cast<std::int64_t>(gt.size()) - m.idtp;
  m.idfp = static_cast<std::int64_t>(hyp.size()) - m.idtp;
  m.idp = safe_ratio(static_cast<double>(m.idtp), static_cast<double>(m.idtp + m.idfp));
  m.idr = safe_ratio(static_cast<double>(m.idtp), static_cast<double>(m.idtp + m.idfn));
  m.idf1 = safe_ratio(2.0 * static_cast<double>(m.idtp), static_cast<double>(2 * m.idtp + m.idfp + m.idfn));
  return m;
}

// ---------------------------------------------------------------- MOTA / MCTA

struct MismatchCounts {
  std::int64_t m_s = 0;
  std::int64_t tp_s = 0;
  std::int64_t m_i = 0;
  std::int64_t tp_i = 0;
  std::int64_t fragmentations = 0;
  std::int64_t fn = 0;
  std::int64_t fp = 0;
  std::int64_t tp = 0;
  std::int64_t num_gt = 0;
  std::int64_t num_hyp = 0;
};

// Per camera-frame greedy highest-IoU correspondence (IoU >= 0.5). Along each
// truth identity's matched detections in time order, a change of hypothesis
// id counts as M^s when both detections share a camera and as M^i otherwise;
// TP^s / TP^i split the matched detections by the same rule, the first match
// of an identity counting as within-camera.
inline MismatchCounts count_mismatches(const GroundTruthLog& gt, const HypothesisLog& hyp) {
  MismatchCounts c;
  c.num_gt = static_cast<std::int64_t>(gt.size());
  c.num_hyp = static_cast<std::int64_t>(hyp.size());
  // identity -> (frame, camera, hyp id)
  std::map<int, std::vector<std::tuple<std::int64_t, int, int>>> trail;
  for (const auto& [key, truths] : gt.frames()) {
    auto it = hyp.frames().find(key);
    if (it == hyp.frames().end()) continue;
    const auto& hyps = it->second;
    ScoreMatrix ious(truths.size(), hyps.size());
    for (std::size_t g = 0; g < truths.size(); ++g) {
      for (std::size_t h = 0; h < hyps.size(); ++h) {
        const double v = iou(truths[g].box, hyps[h].box);
        if (v >= kIouGate) ious(g, h) = v;
      }
    }
    for (const auto& m : greedy_associate(ious, kIouGate).matches) {
      trail[truths[m.row].identity].emplace_back(key.second, key.first, hyps[m.col].identity);
    }
  }
  for (auto& [id, seq] : trail) {
    std::sort(seq.begin(), seq.end());
    c.tp += static_cast<std::int64_t>(seq.size());
    ++c.tp_s;
    for (std::size_t k = 1; k < seq.size(); ++k) {
      const bool same_camera = std::get<1>(seq[k]) == std::get<1>(seq[k - 1]);
      const bool switched = std::get<2>(seq[k]) != std::get<2>(seq[k - 1]);
      if (same_camera) {
        ++c.tp_s;
        if (switched) ++c.m_s;
      } else {
        ++c.tp_i;
        if (switched) ++c.m_i;
      }
    }
  }
  c.fn = c.num_gt - c.tp;
  c.fp = c.num_hyp - c.tp;
  c.fragmentations = c.m_s;
  return c;
}

inline double mota(std::int64_t fn, std::int64_t fp, std::int64_t fragmentations, std::int64_t d) {
  if (d <= 0) throw DomainError("MOTA needs at least one ground-truth detection");
  return 1.0 - static_cast<double>(fn + fp + fragmentations) / static_cast<double>(d);
}

// A regime without true positives contributes a factor of 1.
inline double mcta(double detection_f1, std::int64_t m_s, std::int64_t tp_s, std::int64_t m_i, std::int64_t tp_i) {
  const double within = tp_s > 0 ? 1.0 - static_cast<double>(m_s) / static_cast<double>(tp_s) : 1.0;
  const double across = tp_i > 0 ? 1.0 - static_cast<double>(m_i) / static_cast<double>(tp_i) : 1.0;
  return detection_f1 * within * across;
}

inline double detection_f1(const MismatchCounts& c) {
  return safe_ratio(2.0 * static_cast<double>(c.tp), static_cast<double>(2 * c.tp + c.fp + c.fn));
}

// Relabels every (camera, identity) pair as its own identity, which turns a
// multi-camera log into independent per-camera logs.
inline TrackLog split_by_camera(const TrackLog& log) {
  std::map<std::pair<int, int>, int> ids;
  TrackLog out;
  for (const auto& [key, obs] : log.frames()) {
    for (const auto& o : obs) {
      const int id = ids.emplace(std::make_pair(key.first, o.identity), static_cast<int>(ids.size())).first->second;
      out.add(key.first, key.second, id, o.box);
    }
  }
  return out;
}

struct MetricsReport {
  std::optional<double> ie;
  std::vector<IeStep> ie_steps;
  IdMeasures id;
  IdMeasures sct_id;  // within-camera: identities split per camera on both sides
  MismatchCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double mota = 0.0;
  double mcta = 0.0;
};

inline MetricsReport evaluate_logs(const GroundTruthLog& gt, const HypothesisLog& hyp,
                                   const HypothesisLog* sct_hyp = nullptr) {
  MetricsReport r;
  r.id = id_measures(gt, hyp);
  r.sct_id = id_measures(split_by_camera(gt), split_by_camera(sct_hyp ? *sct_hyp : hyp));
  r.counts = count_mismatches(gt, hyp);
  r.precision = safe_ratio(static_cast<double>(r.counts.tp), static_cast<double>(r.counts.tp + r.counts.fp));
  r.recall = safe_ratio(static_cast<double>(r.counts.tp), static_cast<double>(r.counts.tp + r.counts.fn));
  r.f1 = detection_f1(r.counts);
  r.mota = mota(r.counts.fn, r.counts.fp, r.counts.fragmentations, r.counts.num_gt);
  r.mcta = mcta(r.f1, r.counts.m_s, r.counts.tp_s, r.counts.m_i, r.counts.tp_i);
  return r;
}

}  // namespace cantrack
