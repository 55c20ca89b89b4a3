#pragma once

// Straight-line re-implementations used as test oracles. They share data
// types with the library but none of its algorithms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <vector>

#include "cantrack/aggregation.hpp"
#include "cantrack/association.hpp"
#include "cantrack/metrics.hpp"

namespace oracle {

using Table = std::vector<std::vector<double>>;

inline Table to_table(const cantrack::nn::Matrix& m) {
  Table t(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = m(r, c);
  }
  return t;
}

// Layer by layer with explicit loops. Train mode uses biased batch variance
// when there are at least two rows, otherwise the running statistics.
inline std::vector<double> mlp_forward(const cantrack::nn::MlpParams& p, Table x, bool train) {
  const std::size_t n = x.size();
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& l = p.layers[li];
    const auto out = static_cast<std::size_t>(l.weight.rows());
    const auto in = static_cast<std::size_t>(l.weight.cols());
    Table a(n, std::vector<double>(out, 0.0));
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t o = 0; o < out; ++o) {
        double s = l.bias(static_cast<Eigen::Index>(o));
        for (std::size_t i = 0; i < in; ++i) s += x[r][i] * l.weight(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i));
        a[r][o] = s;
      }
    }
    if (li + 1 < p.layers.size()) {
      for (std::size_t o = 0; o < out; ++o) {
        double mean = l.bn_running_mean(static_cast<Eigen::Index>(o));
        double var = l.bn_running_var(static_cast<Eigen::Index>(o));
        if (train && n >= 2) {
          mean = 0.0;
          for (std::size_t r = 0; r < n; ++r) mean += a[r][o];
          mean /= static_cast<double>(n);
          var = 0.0;
          for (std::size_t r = 0; r < n; ++r) var += (a[r][o] - mean) * (a[r][o] - mean);
          var /= static_cast<double>(n);
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double z = (a[r][o] - mean) / std::sqrt(var + 1e-5) * l.bn_gamma(static_cast<Eigen::Index>(o)) +
                           l.bn_beta(static_cast<Eigen::Index>(o));
          a[r][o] = z > 0.0 ? z : 0.0;
        }
      }
    }
    x = std::move(a);
  }
  std::vector<double> logits(n);
  for (std::size_t r = 0; r < n; ++r) logits[r] = x[r][0];
  return logits;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  std::vector<double> e(z.size());
  double s = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) s += (e[k] = std::exp(z[k] - m));
  for (double& v : e) v /= s;
  return e;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return ab / std::sqrt(aa * bb);
}

// Metadata row (w, h, x, y, cam) scaled to [0, 1].
inline std::vector<double> meta_row(const cantrack::DetectionMeta& m, const cantrack::MetaContext& c) {
  return {m.w / c.frame_width, m.h / c.frame_height, m.x / c.frame_width, m.y / c.frame_height,
          static_cast<double>(m.cam_id) / static_cast<double>(c.num_cameras)};
}

// Joint cost over every probe/template pair, evaluated on one stacked
// train-mode batch so batch statistics match the library's.
inline double batch_cost(const cantrack::TrainBatch& b, const cantrack::CanModel& m) {
  const std::size_t mp = b.probe_labels.size();
  const std::size_t mg = b.template_labels.size();
  const auto d = static_cast<std::size_t>(b.gallery_features.cols());
  std::vector<std::vector<std::size_t>> members(mg);
  for (std::size_t k = 0; k < b.r.size(); ++k) members[static_cast<std::size_t>(b.r[k])].push_back(k);

  Table x;
  for (std::size_t i = 0; i < mp; ++i) {
    const auto pm = meta_row(b.probe_metas[i], m.meta);
    for (std::size_t j = 0; j < mg; ++j) {
      for (std::size_t k : members[j]) {
        std::vector<double> row;
        for (std::size_t c = 0; c < d; ++c) row.push_back(b.gallery_features(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)));
        for (double v : meta_row(b.gallery_metas[k], m.meta)) row.push_back(v);
        for (double v : pm) row.push_back(v);
        x.push_back(row);
      }
    }
  }
  const auto logits = mlp_forward(m.evalnet, x, true);

  double total = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < mp; ++i) {
    std::vector<double> probe(d);
    for (std::size_t c = 0; c < d; ++c) probe[c] = b.probe_features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    for (std::size_t j = 0; j < mg; ++j) {
      const std::vector<double> z(logits.begin() + static_cast<std::ptrdiff_t>(pos),
                                  logits.begin() + static_cast<std::ptrdiff_t>(pos + members[j].size()));
      pos += members[j].size();
      const auto w = softmax(z);
      std::vector<double> f(d, 0.0);
      for (std::size_t k = 0; k < w.size(); ++k) {
        for (std::size_t c = 0; c < d; ++c) {
          f[c] += w[k] * b.gallery_features(static_cast<Eigen::Index>(members[j][k]), static_cast<Eigen::Index>(c));
        }
      }
      const double y = b.match(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      const double cs = cosine(probe, f);
      std::vector<double> cls(static_cast<std::size_t>(m.head.weight.rows()));
      for (std::size_t c = 0; c < cls.size(); ++c) {
        double s = m.head.bias(static_cast<Eigen::Index>(c));
        for (std::size_t e = 0; e < d; ++e) s += m.head.weight(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(e)) * f[e];
        cls[c] = s;
      }
      const auto q = softmax(cls);
      total += (cs - y) * (cs - y) - std::log(q[static_cast<std::size_t>(b.template_labels[j])]);
    }
  }
  return total / static_cast<double>(mp * mg);
}

// Greedy matching by repeated global-maximum search over the remaining
// admissible cells; ties go to the lower row, then the lower column.
inline std::vector<std::tuple<std::size_t, std::size_t, double>> greedy(const std::vector<std::vector<std::optional<double>>>& s,
                                                                       double tau) {
  std::vector<std::tuple<std::size_t, std::size_t, double>> out;
  std::set<std::size_t> used_r, used_c;
  for (;;) {
    bool found = false;
    std::size_t br = 0, bc = 0;
    double best = 0.0;
    for (std::size_t r = 0; r < s.size(); ++r) {
      if (used_r.count(r)) continue;
      for (std::size_t c = 0; c < s[r].size(); ++c) {
        if (used_c.count(c) || !s[r][c] || *s[r][c] < tau) continue;
        if (!found || *s[r][c] > best) {
          found = true;
          best = *s[r][c];
          br = r;
          bc = c;
        }
      }
    }
    if (!found) return out;
    out.emplace_back(br, bc, best);
    used_r.insert(br);
    used_c.insert(bc);
  }
}

// IE by replaying the event log with its own bookkeeping.
inline double inference_error(const std::vector<cantrack::AssociationEvent>& log, const std::map<std::int64_t, int>& truth) {
  std::map<int, int> owner;  // track -> identity of its first detection
  std::set<int> seen;
  std::map<std::int64_t, std::pair<int, int>> per_time;  // time -> (misassociations, detections)
  for (const auto& ev : log) {
    const int g = truth.at(ev.feature_id);
    bool bad;
    if (ev.decision == cantrack::Decision::kNewTrack) {
      bad = seen.count(g) > 0;
      owner[ev.track_id] = g;
    } else {
      bad = owner.at(ev.track_id) != g || seen.count(g) == 0;
    }
    seen.insert(g);
    auto& [m, n] = per_time[ev.time];
    m += bad ? 1 : 0;
    n += 1;
  }
  double sum = 0.0;
  for (const auto& [t, mn] : per_time) sum += static_cast<double>(mn.first) / static_cast<double>(mn.second);
  return sum / static_cast<double>(per_time.size());
}

// Flat observation list for brute-force metric oracles.
struct Obs {
  int camera;
  std::int64_t frame;
  int id;
  cantrack::BBox box;
};

inline std::vector<Obs> flatten(const cantrack::TrackLog& log) {
  std::vector<Obs> out;
  for (const auto& [key, obs] : log.frames()) {
    for (const auto& o : obs) out.push_back({key.first, key.second, o.identity, o.box});
  }
  return out;
}

inline double iou(const cantrack::BBox& a, const cantrack::BBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

// Identity true positives maximized over every one-to-one identity mapping
// (recursive search over truth identities).
inline std::int64_t best_idtp(const std::vector<Obs>& gt, const std::vector<Obs>& hyp) {
  std::vector<int> gids, hids;
  for (const auto& o : gt) {
    if (std::find(gids.begin(), gids.end(), o.id) == gids.end()) gids.push_back(o.id);
  }
  for (const auto& o : hyp) {
    if (std::find(hids.begin(), hids.end(), o.id) == hids.end()) hids.push_back(o.id);
  }
  auto overlap = [&](int g, int h) {
    std::int64_t n = 0;
    for (const auto& a : gt) {
      if (a.id != g) continue;
      for (const auto& b : hyp) {
        if (b.id == h && a.camera == b.camera && a.frame == b.frame && oracle::iou(a.box, b.box) >= 0.5) ++n;
      }
    }
    return n;
  };
  std::vector<std::vector<std::int64_t>> w(gids.size(), std::vector<std::int64_t>(hids.size()));
  for (std::size_t i = 0; i < gids.size(); ++i) {
    for (std::size_t j = 0; j < hids.size(); ++j) w[i][j] = overlap(gids[i], hids[j]);
  }
  std::vector<bool> taken(hids.size(), false);
  std::function<std::int64_t(std::size_t)> rec = [&](std::size_t i) -> std::int64_t {
    if (i == gids.size()) return 0;
    std::int64_t best = rec(i + 1);  // leave truth identity i unmatched
    for (std::size_t j = 0; j < hids.size(); ++j) {
      if (taken[j]) continue;
      taken[j] = true;
      best = std::max(best, w[i][j] + rec(i + 1));
      taken[j] = false;
    }
    return best;
  };
  return rec(0);
}

// Quadratic per-identity scan: matched detections of each truth identity in
// time order, hypothesis changes split by whether the camera changed. Assumes
// each box overlaps at most one box of the other log, so matching is trivial.
inline cantrack::MismatchCounts mismatch_counts(const cantrack::TrackLog& gt, const cantrack::TrackLog& hyp) {
  const auto g = flatten(gt);
  const auto h = flatten(hyp);
  cantrack::MismatchCounts c;
  c.num_gt = static_cast<std::int64_t>(g.size());
  c.num_hyp = static_cast<std::int64_t>(h.size());
  std::set<int> ids;
  for (const auto& o : g) ids.insert(o.id);
  for (int id : ids) {
    std::vector<std::tuple<std::int64_t, int, int>> trail;
    for (const auto& a : g) {
      if (a.id != id) continue;
      for (const auto& b : h) {
        if (a.camera == b.camera && a.frame == b.frame && oracle::iou(a.box, b.box) >= 0.5) {
          trail.emplace_back(a.frame, a.camera, b.id);
        }
      }
    }
    std::sort(trail.begin(), trail.end());
    for (std::size_t k = 0; k < trail.size(); ++k) {
      ++c.tp;
      if (k == 0) {
        ++c.tp_s;
        continue;
      }
      const bool same = std::get<1>(trail[k]) == std::get<1>(trail[k - 1]);
      const bool change = std::get<2>(trail[k]) != std::get<2>(trail[k - 1]);
      (same ? c.tp_s : c.tp_i) += 1;
      if (change) (same ? c.m_s : c.m_i) += 1;
    }
  }
  c.fn = c.num_gt - c.tp;
  c.fp = c.num_hyp - c.tp;
  return c;
}

}  // namespace oracle
