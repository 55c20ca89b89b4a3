#pragma once

// Data association: IoU-gated sliding-window tracklet building inside each
// camera, and greedy merging of tracklets across cameras scored with
// aggregated template features.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "cantrack/aggregation.hpp"
#include "cantrack/error.hpp"
#include "cantrack/types.hpp"

namespace cantrack {

inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

inline constexpr double kIouGate = 0.5;

// nullopt is the forbidden ("minus infinity") score; it never enters
// arithmetic and is skipped by greedy selection.
using Score = std::optional<double>;

inline Score gate(const BBox& a, const BBox& b) {
  if (iou(a, b) >= kIouGate) return 1.0;
  return std::nullopt;
}

inline Score sct_score(const Detection& prev, const Detection& cur) {
  const Score g = gate(prev.box, cur.box);
  if (!g) return std::nullopt;
  return cosine_similarity(prev.feature, cur.feature) + *g;
}

class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  ScoreMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), cells_(rows * cols) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  Score& operator()(std::size_t r, std::size_t c) { return cells_[r * cols_ + c]; }
  const Score& operator()(std::size_t r, std::size_t c) const { return cells_[r * cols_ + c]; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Score> cells_;
};

struct Assignment {
  std::size_t row = 0;
  std::size_t col = 0;
  double score = 0.0;
};

struct GreedyResult {
  std::vector<Assignment> matches;  // in selection order
  std::vector<std::size_t> unmatched_rows;
  std::vector<std::size_t> unmatched_cols;
};

// Repeatedly claims the highest remaining score >= tau whose row and column
// are both still free. Ties go to the lower row, then the lower column.
inline GreedyResult greedy_associate(const ScoreMatrix& scores, double tau) {
  std::vector<Assignment> candidates;
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    for (std::size_t c = 0; c < scores.cols(); ++c) {
      const Score& s = scores(r, c);
      if (s && *s >= tau) candidates.push_back({r, c, *s});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Assignment& a, const Assignment& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });
  std::vector<bool> row_used(scores.rows(), false);
  std::vector<bool> col_used(scores.cols(), false);
  GreedyResult out;
  for (const auto& cand : candidates) {
    if (row_used[cand.row] || col_used[cand.col]) continue;
    row_used[cand.row] = col_used[cand.col] = true;
    out.matches.push_back(cand);
  }
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    if (!row_used[r]) out.unmatched_rows.push_back(r);
  }
  for (std::size_t c = 0; c < scores.cols(); ++c) {
    if (!col_used[c]) out.unmatched_cols.push_back(c);
  }
  return out;
}

struct FrameWindow {
  std::int64_t begin = 0;
  std::int64_t end = 0;  // exclusive
};

// Windows of length L at stride L/2 over [begin, end). When the range is not
// an exact fit, a final window clipped to `end` covers the tail.
inline std::vector<FrameWindow> window_partition(std::int64_t begin, std::int64_t end, std::int64_t window_len) {
  if (window_len < 2 || window_len % 2 != 0) {
    throw ValidationError("window length must be an even number >= 2, got " + std::to_string(window_len));
  }
  std::vector<FrameWindow> out;
  if (end <= begin) return out;
  const std::int64_t stride = window_len / 2;
  std::int64_t start = begin;
  for (; start + window_len <= end; start += stride) out.push_back({start, start + window_len});
  if (out.empty()) {
    out.push_back({begin, end});
  } else if (out.back().end < end) {
    out.push_back({out.back().begin + stride, end});
  }
  return out;
}

struct Trajectory {
  int id = 0;
  int camera = 1;
  std::vector<std::size_t> detections;  // indices into the detection list, frame-ordered
  std::optional<int> global_identity;
};

enum class Decision { kMatched, kNewTrack };

struct AssociationEvent {
  std::int64_t time = 0;
  int camera = 1;
  std::int64_t frame = 0;
  std::size_t detection = 0;
  std::int64_t feature_id = 0;
  Decision decision = Decision::kNewTrack;
  int track_id = 0;
  std::optional<int> local_track;
  Score score;
  std::optional<bool> correct;
};

struct SctConfig {
  std::int64_t window_len = 60;
  double tau_sct = 0.2;
};

struct SctResult {
  std::vector<Trajectory> trajectories;
  std::vector<AssociationEvent> events;
};

namespace detail {

inline bool event_order(const AssociationEvent& a, const AssociationEvent& b) {
  return std::tie(a.time, a.camera, a.detection) < std::tie(b.time, b.camera, b.detection);
}

}  // namespace detail

// Per camera, frame by frame: detections are greedily matched against
// tracklets whose last detection lies in the earliest window still covering
// the current frame; leftovers open new tracklets.
inline SctResult build_sct_trajectories(std::span<const Detection> detections, const SctConfig& cfg) {
  if (cfg.window_len < 2 || cfg.window_len % 2 != 0) {
    throw ValidationError("window length must be an even number >= 2, got " + std::to_string(cfg.window_len));
  }
  const std::int64_t stride = cfg.window_len / 2;
  std::map<int, std::vector<std::size_t>> by_camera;
  for (std::size_t i = 0; i < detections.size(); ++i) by_camera[detections[i].camera].push_back(i);

  SctResult out;
  for (auto& [camera, idx] : by_camera) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return detections[a].frame < detections[b].frame; });
    const std::int64_t first = detections[idx.front()].frame;
    std::vector<std::size_t> open;  // trajectory positions in out.trajectories
    std::size_t pos = 0;
    while (pos < idx.size()) {
      const std::int64_t t = detections[idx[pos]].frame;
      std::size_t stop = pos;
      while (stop < idx.size() && detections[idx[stop]].frame == t) ++stop;
      const std::int64_t q = (t - first) / stride;
      const std::int64_t horizon = first + std::max<std::int64_t>(0, q - 1) * stride;

      std::vector<std::size_t> rows;
      for (std::size_t tp : open) {
        const auto& tr = out.trajectories[tp];
        const std::int64_t last = detections[tr.detections.back()].frame;
        if (last >= horizon && last < t) rows.push_back(tp);
      }
      open = rows;  // anything older can never become eligible again

      ScoreMatrix scores(rows.size(), stop - pos);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const Detection& prev = detections[out.trajectories[rows[r]].detections.back()];
        for (std::size_t c = 0; c < stop - pos; ++c) scores(r, c) = sct_score(prev, detections[idx[pos + c]]);
      }
      const GreedyResult g = greedy_associate(scores, cfg.tau_sct);
      std::vector<std::optional<Assignment>> by_col(stop - pos);
      for (const auto& m : g.matches) by_col[m.col] = m;
      for (std::size_t c = 0; c < stop - pos; ++c) {
        const std::size_t di = idx[pos + c];
        AssociationEvent ev;
        ev.time = t;
        ev.camera = camera;
        ev.frame = t;
        ev.detection = di;
        ev.feature_id = detections[di].feature_id;
        if (by_col[c]) {
          auto& tr = out.trajectories[rows[by_col[c]->row]];
          tr.detections.push_back(di);
          ev.decision = Decision::kMatched;
          ev.track_id = tr.id;
          ev.score = by_col[c]->score;
        } else {
          Trajectory tr;
          tr.id = static_cast<int>(out.trajectories.size());
          tr.camera = camera;
          tr.detections.push_back(di);
          open.push_back(out.trajectories.size());
          ev.decision = Decision::kNewTrack;
          ev.track_id = tr.id;
          out.trajectories.push_back(std::move(tr));
        }
        ev.local_track = ev.track_id;
        out.events.push_back(ev);
      }
      pos = stop;
    }
  }
  std::stable_sort(out.events.begin(), out.events.end(), detail::event_order);
  return out;
}

inline std::int64_t first_frame(const Trajectory& t, std::span<const Detection> dets) {
  return dets[t.detections.front()].frame;
}
inline std::int64_t last_frame(const Trajectory& t, std::span<const Detection> dets) {
  return dets[t.detections.back()].frame;
}

inline bool temporally_conflict(const Trajectory& a, const Trajectory& b, std::span<const Detection> dets) {
  return a.camera == b.camera && first_frame(a, dets) <= last_frame(b, dets) &&
         first_frame(b, dets) <= last_frame(a, dets);
}

// Representative probe of a trajectory: its temporally middle detection.
inline std::size_t probe_detection(const Trajectory& t) {
  if (t.detections.empty()) throw ContractError("trajectory without detections");
  return t.detections[t.detections.size() / 2];
}

inline GalleryTemplate to_template(const Trajectory& t, std::span<const Detection> dets) {
  if (t.detections.empty()) throw ContractError("trajectory without detections");
  GalleryTemplate g;
  const auto d = dets[t.detections.front()].feature.size();
  g.features.resize(static_cast<Eigen::Index>(t.detections.size()), d);
  for (std::size_t k = 0; k < t.detections.size(); ++k) {
    const Detection& det = dets[t.detections[k]];
    if (det.feature.size() != d) throw ShapeError("trajectory features differ in dimension");
    g.features.row(static_cast<Eigen::Index>(k)) = det.feature.transpose();
    g.metas.push_back(det.meta());
  }
  g.trajectory_index = t.id;
  return g;
}

// Ordered score: cosine between the probe trajectory's representative feature
// and the gallery trajectory's aggregate. `model == nullptr` selects uniform
// (mean-pooling) weights.
inline double ordered_trajectory_score(const GalleryTemplate& gallery, const Detection& probe, const CanModel* model) {
  const nn::Vector w = model ? evalnet_weights(gallery, probe.meta(), model->evalnet, model->meta)
                             : uniform_weights(gallery.size());
  return cosine_similarity(probe.feature, aggregate_template(gallery.features, w));
}

// Symmetric pairwise scores; same-camera pairs that overlap in time are
// forbidden, as is the diagonal.
inline ScoreMatrix ict_score_matrix(std::span<const Trajectory> trajs, std::span<const Detection> dets,
                                    const CanModel* model, unsigned threads = 1) {
  const std::size_t n = trajs.size();
  std::vector<GalleryTemplate> templates;
  templates.reserve(n);
  for (const auto& t : trajs) templates.push_back(to_template(t, dets));

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (!temporally_conflict(trajs[a], trajs[b], dets)) pairs.emplace_back(a, b);
    }
  }
  std::vector<double> values(pairs.size());
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k) {
      const auto [a, b] = pairs[k];
      const double ab = ordered_trajectory_score(templates[a], dets[probe_detection(trajs[b])], model);
      const double ba = ordered_trajectory_score(templates[b], dets[probe_detection(trajs[a])], model);
      values[k] = 0.5 * (ab + ba);
    }
  };
  threads = std::max(1u, threads);
  if (threads == 1 || pairs.size() < 2) {
    work(0, pairs.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (pairs.size() + threads - 1) / threads;
    for (std::size_t lo = 0; lo < pairs.size(); lo += chunk) {
      pool.emplace_back(work, lo, std::min(pairs.size(), lo + chunk));
    }
    for (auto& th : pool) th.join();
  }
  ScoreMatrix m(n, n);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    m(pairs[k].first, pairs[k].second) = values[k];
    m(pairs[k].second, pairs[k].first) = values[k];
  }
  return m;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  // The smaller root survives, keeping representatives deterministic.
  std::size_t unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
    return a;
  }

 private:
  std::vector<std::size_t> parent_;
};

struct IctResult {
  std::vector<int> global_identity;  // per trajectory
  std::vector<AssociationEvent> events;  // one per trajectory, in start order
};

// Walks pairs in decreasing score order (ties: lower row, then lower column)
// and unites the two groups when the score clears tau and no two members of
// the combined group share a camera over overlapping frames. Global ids are
// numbered by the earliest start of each group.
inline IctResult ict_merge(std::span<const Trajectory> trajs, std::span<const Detection> dets,
                           const ScoreMatrix& scores, double tau) {
  const std::size_t n = trajs.size();
  if (scores.rows() != n || scores.cols() != n) throw ContractError("ict_merge: score matrix size mismatch");
  std::vector<Assignment> candidates;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const Score& s = scores(a, b);
      if (s && *s >= tau) candidates.push_back({a, b, *s});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Assignment& x, const Assignment& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.row != y.row) return x.row < y.row;
    return x.col < y.col;
  });

  UnionFind uf(n);
  std::vector<std::vector<std::size_t>> members(n);
  for (std::size_t i = 0; i < n; ++i) members[i] = {i};
  for (const auto& c : candidates) {
    const std::size_t ra = uf.find(c.row);
    const std::size_t rb = uf.find(c.col);
    if (ra == rb) continue;
    bool clash = false;
    for (std::size_t x : members[ra]) {
      for (std::size_t y : members[rb]) {
        if (temporally_conflict(trajs[x], trajs[y], dets)) {
          clash = true;
          break;
        }
      }
      if (clash) break;
    }
    if (clash) continue;
    const std::size_t root = uf.unite(ra, rb);
    const std::size_t other = root == ra ? rb : ra;
    members[root].insert(members[root].end(), members[other].begin(), members[other].end());
    members[other].clear();
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto start_key = [&](std::size_t i) { return std::make_tuple(first_frame(trajs[i], dets), trajs[i].camera, trajs[i].id); };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return start_key(a) < start_key(b); });

  IctResult out;
  out.global_identity.assign(n, -1);
  std::map<std::size_t, int> id_of_root;
  std::vector<std::vector<std::size_t>> seen_in_group(n);
  for (std::size_t i : order) {
    const std::size_t root = uf.find(i);
    const Detection& head = dets[trajs[i].detections.front()];
    AssociationEvent ev;
    ev.time = head.frame;
    ev.camera = trajs[i].camera;
    ev.frame = head.frame;
    ev.detection = trajs[i].detections.front();
    ev.feature_id = head.feature_id;
    ev.local_track = trajs[i].id;
    auto it = id_of_root.find(root);
    if (it == id_of_root.end()) {
      const int gid = static_cast<int>(id_of_root.size());
      id_of_root.emplace(root, gid);
      ev.decision = Decision::kNewTrack;
      ev.track_id = gid;
    } else {
      ev.decision = Decision::kMatched;
      ev.track_id = it->second;
      double best = -2.0;
      for (std::size_t j : seen_in_group[root]) {
        if (const Score& s = scores(i, j); s && *s > best) best = *s;
      }
      if (best > -2.0) ev.score = best;
    }
    seen_in_group[root].push_back(i);
    out.global_identity[i] = id_of_root.at(root);
    out.events.push_back(ev);
  }
  return out;
}

// Re-expresses detection-level events in terms of global identities: a
// detection continues its identity if that identity already owns an earlier
// detection, otherwise it opens it.
inline std::vector<AssociationEvent> relabel_events(std::span<const AssociationEvent> sct_events,
                                                    std::span<const Trajectory> trajs) {
  std::map<int, int> global_of_track;
  for (const auto& t : trajs) {
    if (!t.global_identity) throw ContractError("relabel_events: trajectory without global identity");
    global_of_track[t.id] = *t.global_identity;
  }
  std::vector<AssociationEvent> out(sct_events.begin(), sct_events.end());
  std::stable_sort(out.begin(), out.end(), detail::event_order);
  std::vector<bool> opened(global_of_track.size() + 1, false);
  for (auto& ev : out) {
    const int local = ev.local_track.value_or(ev.track_id);
    const int gid = global_of_track.at(local);
    if (static_cast<std::size_t>(gid) >= opened.size()) opened.resize(static_cast<std::size_t>(gid) + 1, false);
    ev.local_track = local;
    ev.track_id = gid;
    if (opened[static_cast<std::size_t>(gid)]) {
      ev.decision = Decision::kMatched;
    } else {
      ev.decision = Decision::kNewTrack;
      ev.score.reset();
      opened[static_cast<std::size_t>(gid)] = true;
    }
  }
  return out;
}

struct TrackerConfig {
  SctConfig sct;
  double tau_ict = 0.5;
  unsigned threads = 1;
};

struct TrackingOutput {
  std::vector<Trajectory> trajectories;  // global_identity filled
  std::vector<AssociationEvent> sct_events;
  std::vector<AssociationEvent> ict_events;
  std::vector<AssociationEvent> events;  // detection-level, global identities
  ScoreMatrix ict_scores;
};

inline TrackingOutput run_tracker(std::span<const Detection> dets, const TrackerConfig& cfg, const CanModel* model) {
  TrackingOutput out;
  auto sct = build_sct_trajectories(dets, cfg.sct);
  out.trajectories = std::move(sct.trajectories);
  out.sct_events = std::move(sct.events);
  out.ict_scores = ict_score_matrix(out.trajectories, dets, model, cfg.threads);
  auto ict = ict_merge(out.trajectories, dets, out.ict_scores, cfg.tau_ict);
  for (std::size_t i = 0; i < out.trajectories.size(); ++i) out.trajectories[i].global_identity = ict.global_identity[i];
  out.ict_events = std::move(ict.events);
  out.events = relabel_events(out.sct_events, out.trajectories);
  return out;
}

}  // namespace cantrack
