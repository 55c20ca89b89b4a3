#pragma once

// Deterministic multi-camera scenario generator: identities walk linear
// paths through non-overlapping camera views with blind-spot gaps, and each
// visible detection carries an embedding drawn around its identity's
// prototype.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "cantrack/error.hpp"
#include "cantrack/metrics.hpp"
#include "cantrack/types.hpp"

namespace cantrack::synth {

struct PathSegment {
  int camera = 1;
  std::int64_t entry_frame = 0;
  std::int64_t exit_frame = 0;  // inclusive
  BBox start;
  BBox end;
};

struct IdentityPath {
  int identity = 0;
  std::vector<PathSegment> segments;
};

struct WorldConfig {
  int num_cameras = 2;
  double frame_width = 1920.0;
  double frame_height = 1080.0;
  double fps = 60.0;
  std::int64_t num_frames = 300;
  int num_identities = 5;
  std::size_t embedding_dim = 64;
  double sigma = 0.0;  // expected norm of the additive noise vector
  double beta = 0.0;   // norm of the per-camera bias vector
  double occlusion_prob = 0.0;
  // Bias and noise are scaled by (reference_height / box height)^quality_exponent,
  // so distant (small) detections are less reliable. 0 disables the effect.
  double quality_exponent = 0.0;
  double reference_height = 0.5;  // fraction of frame height
  std::uint64_t seed = 0;

  // Automatic layout, used when `paths` is empty.
  bool disjoint_lanes = true;
  std::int64_t segment_min = 60;
  std::int64_t segment_max = 120;
  std::int64_t gap_min = 10;
  std::int64_t gap_max = 40;
  double min_height = 0.2;  // box heights, fractions of frame height
  double max_height = 0.5;

  std::vector<IdentityPath> paths;
};

inline void validate(const WorldConfig& c) {
  auto need = [](bool ok, const std::string& field, const std::string& why) {
    if (!ok) throw ValidationError("world config field '" + field + "': " + why);
  };
  need(c.num_cameras >= 1, "num_cameras", "must be >= 1");
  need(c.frame_width > 0.0, "frame_width", "must be positive");
  need(c.frame_height > 0.0, "frame_height", "must be positive");
  need(c.fps > 0.0, "fps", "must be positive");
  need(c.num_frames >= 1, "num_frames", "must be >= 1");
  need(c.num_identities >= 1, "num_identities", "must be >= 1");
  need(c.embedding_dim >= 2, "embedding_dim", "must be >= 2");
  need(c.sigma >= 0.0, "sigma", "must be >= 0");
  need(c.beta >= 0.0, "beta", "must be >= 0");
  need(c.occlusion_prob >= 0.0 && c.occlusion_prob < 1.0, "occlusion_prob", "must lie in [0, 1)");
  need(c.quality_exponent >= 0.0, "quality_exponent", "must be >= 0");
  need(c.reference_height > 0.0, "reference_height", "must be positive");
  need(c.segment_min >= 1 && c.segment_max >= c.segment_min, "segment_min", "need 1 <= segment_min <= segment_max");
  need(c.gap_min >= 0 && c.gap_max >= c.gap_min, "gap_min", "need 0 <= gap_min <= gap_max");
  need(c.min_height > 0.0 && c.max_height >= c.min_height && c.max_height <= 1.0, "min_height",
       "need 0 < min_height <= max_height <= 1");
  for (const auto& p : c.paths) {
    for (std::size_t s = 0; s < p.segments.size(); ++s) {
      const auto& seg = p.segments[s];
      const std::string where = "paths[identity " + std::to_string(p.identity) + "].segments[" + std::to_string(s) + "]";
      need(seg.camera >= 1 && seg.camera <= c.num_cameras, where + ".camera", "outside [1, num_cameras]");
      need(seg.entry_frame >= 0 && seg.exit_frame >= seg.entry_frame, where + ".exit_frame", "must be >= entry_frame >= 0");
      need(seg.start.valid() && seg.end.valid(), where + ".start", "boxes need positive size");
      for (std::size_t o = 0; o < s; ++o) {
        const auto& other = p.segments[o];
        need(!(other.camera == seg.camera && other.entry_frame <= seg.exit_frame && seg.entry_frame <= other.exit_frame),
             where, "overlaps an earlier segment of the same identity in the same camera");
      }
    }
  }
}

enum class Stream : std::uint32_t { kPrototypes = 1, kLayout = 2, kOcclusion = 3, kNoise = 4 };

// Independent generator per concern, so one stream can be replayed on its own.
inline std::mt19937_64 rng_stream(std::uint64_t seed, Stream s) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s)};
  return std::mt19937_64(seq);
}

inline FeatureVector random_unit(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  FeatureVector v(static_cast<Eigen::Index>(d));
  do {
    for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = gauss(rng);
  } while (v.norm() == 0.0);
  return v.normalized();
}

// Unit-norm bias direction that depends only on the camera id and dimension.
inline FeatureVector camera_bias_direction(int camera, std::size_t d) {
  std::seed_seq seq{0x43414d42u, static_cast<std::uint32_t>(camera), static_cast<std::uint32_t>(d)};
  std::mt19937_64 rng(seq);
  return random_unit(d, rng);
}

// Prototypes on the unit sphere with pairwise cosine < 0.5.
inline std::vector<FeatureVector> make_prototypes(int count, std::size_t d, std::mt19937_64& rng) {
  std::vector<FeatureVector> out;
  constexpr int kMaxAttempts = 100000;
  for (int i = 0; i < count; ++i) {
    int attempts = 0;
    for (;;) {
      FeatureVector v = random_unit(d, rng);
      bool ok = true;
      for (const auto& p : out) {
        if (p.dot(v) >= 0.5) {
          ok = false;
          break;
        }
      }
      if (ok) {
        out.push_back(std::move(v));
        break;
      }
      if (++attempts >= kMaxAttempts) {
        throw ValidationError("cannot place " + std::to_string(count) + " prototypes with cosine < 0.5 in dimension " +
                              std::to_string(d));
      }
    }
  }
  return out;
}

// normalize(prototype + scale * (beta * bias(camera) + noise)), noise ~ N(0, sigma^2 / d)
// per entry. `scale` models detection quality: crops of distant people carry
// more background clutter from the camera and more noise.
inline FeatureVector sample_embedding(const FeatureVector& prototype, int camera, double sigma, double beta,
                                      std::mt19937_64& rng, double scale = 1.0) {
  if (sigma < 0.0 || beta < 0.0) throw ValidationError("sigma and beta must be non-negative");
  const auto d = static_cast<std::size_t>(prototype.size());
  FeatureVector v = prototype.normalized();
  if (sigma == 0.0 && beta == 0.0) return v;
  if (beta > 0.0) v += scale * beta * camera_bias_direction(camera, d);
  if (sigma > 0.0) {
    std::normal_distribution<double> gauss(0.0, sigma * scale / std::sqrt(static_cast<double>(d)));
    for (Eigen::Index k = 0; k < v.size(); ++k) v(k) += gauss(rng);
  }
  const double n = v.norm();
  if (n == 0.0) return prototype.normalized();
  return v / n;
}

inline BBox interpolate(const PathSegment& seg, std::int64_t frame) {
  if (seg.exit_frame == seg.entry_frame) return seg.start;
  const double a = static_cast<double>(frame - seg.entry_frame) / static_cast<double>(seg.exit_frame - seg.entry_frame);
  return {seg.start.x + a * (seg.end.x - seg.start.x), seg.start.y + a * (seg.end.y - seg.start.y),
          seg.start.w + a * (seg.end.w - seg.start.w), seg.start.h + a * (seg.end.h - seg.start.h)};
}

namespace detail {

// Feet drop lower in the image as people come closer (taller boxes).
inline BBox place_box(const WorldConfig& c, double center_x, double h) {
  const double w = 0.4 * h;
  const double bottom = std::min(c.frame_height, c.frame_height * (0.35 + 1.2 * h / c.frame_height));
  const double x = std::clamp(center_x - 0.5 * w, 0.0, c.frame_width - w);
  return {x, bottom - h, w, h};
}

}  // namespace detail

// Identities hop between cameras with blind-spot gaps. With disjoint lanes,
// each camera assigns every identity its own vertical strip so boxes of
// different people never overlap.
inline std::vector<IdentityPath> make_layout(const WorldConfig& c, std::mt19937_64& rng) {
  auto uniform_int = [&rng](std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
  };
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  std::vector<std::vector<int>> lane(static_cast<std::size_t>(c.num_cameras) + 1);
  for (int cam = 1; cam <= c.num_cameras; ++cam) {
    auto& l = lane[static_cast<std::size_t>(cam)];
    l.resize(static_cast<std::size_t>(c.num_identities));
    std::iota(l.begin(), l.end(), 0);
    std::shuffle(l.begin(), l.end(), rng);
  }
  const double lane_width = c.frame_width / static_cast<double>(c.num_identities);
  const double h_lo = c.min_height * c.frame_height;
  double h_hi = c.max_height * c.frame_height;
  if (c.disjoint_lanes) h_hi = std::max(h_lo, std::min(h_hi, 0.9 * lane_width / 0.4));

  std::vector<IdentityPath> paths;
  for (int id = 0; id < c.num_identities; ++id) {
    IdentityPath p;
    p.identity = id;
    std::int64_t t = uniform_int(0, std::min<std::int64_t>(c.gap_max, c.num_frames - 1));
    int prev_camera = 0;
    while (t < c.num_frames) {
      int camera = static_cast<int>(uniform_int(1, c.num_cameras));
      if (c.num_cameras > 1 && camera == prev_camera) camera = camera % c.num_cameras + 1;
      const std::int64_t len = uniform_int(c.segment_min, c.segment_max);
      PathSegment seg;
      seg.camera = camera;
      seg.entry_frame = t;
      seg.exit_frame = std::min(c.num_frames - 1, t + len - 1);
      double h0 = uniform(h_lo, h_hi);
      double h1 = uniform(h_lo, h_hi);
      double x0, x1;
      if (c.disjoint_lanes) {
        const double center = (lane[static_cast<std::size_t>(camera)][static_cast<std::size_t>(id)] + 0.5) * lane_width;
        x0 = x1 = center;
      } else {
        x0 = uniform(0.0, c.frame_width);
        // Keep per-frame drift at most 5% of the narrower box width.
        const double max_shift = 0.05 * 0.4 * std::min(h0, h1) * static_cast<double>(seg.exit_frame - seg.entry_frame);
        x1 = std::clamp(uniform(x0 - max_shift, x0 + max_shift), 0.0, c.frame_width);
      }
      seg.start = detail::place_box(c, x0, h0);
      seg.end = detail::place_box(c, x1, h1);
      p.segments.push_back(seg);
      prev_camera = camera;
      t = seg.exit_frame + 1 + uniform_int(c.gap_min, c.gap_max);
    }
    paths.push_back(std::move(p));
  }
  return paths;
}

struct SyntheticDataset {
  WorldConfig config;  // with the resolved layout in `paths`
  std::vector<FeatureVector> prototypes;
  std::vector<Detection> detections;  // ordered by (frame, camera, identity); feature_id = index

  GroundTruthLog ground_truth() const {
    GroundTruthLog gt;
    for (const auto& d : detections) gt.add(d.camera, d.frame, *d.gt_identity, d.box);
    return gt;
  }
};

inline SyntheticDataset generate_scenario(const WorldConfig& config) {
  validate(config);
  SyntheticDataset ds;
  ds.config = config;
  auto proto_rng = rng_stream(config.seed, Stream::kPrototypes);
  ds.prototypes = make_prototypes(config.num_identities, config.embedding_dim, proto_rng);
  if (ds.config.paths.empty()) {
    auto layout_rng = rng_stream(config.seed, Stream::kLayout);
    ds.config.paths = make_layout(config, layout_rng);
  }
  for (const auto& p : ds.config.paths) {
    if (p.identity < 0 || p.identity >= config.num_identities) {
      throw ValidationError("world config field 'paths.identity': " + std::to_string(p.identity) +
                            " outside [0, num_identities)");
    }
  }
  validate(ds.config);

  auto occlusion_rng = rng_stream(config.seed, Stream::kOcclusion);
  auto noise_rng = rng_stream(config.seed, Stream::kNoise);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double ref_h = config.reference_height * config.frame_height;
  for (const auto& p : ds.config.paths) {
    for (const auto& seg : p.segments) {
      for (std::int64_t f = seg.entry_frame; f <= seg.exit_frame; ++f) {
        if (unit(occlusion_rng) < config.occlusion_prob) continue;
        Detection d;
        d.camera = seg.camera;
        d.frame = f;
        d.box = interpolate(seg, f);
        d.gt_identity = p.identity;
        const double scale = config.quality_exponent > 0.0 ? std::pow(ref_h / d.box.h, config.quality_exponent) : 1.0;
        d.feature = sample_embedding(ds.prototypes[static_cast<std::size_t>(p.identity)], seg.camera, config.sigma,
                                     config.beta, noise_rng, scale);
        ds.detections.push_back(std::move(d));
      }
    }
  }
  std::stable_sort(ds.detections.begin(), ds.detections.end(), [](const Detection& a, const Detection& b) {
    return std::make_tuple(a.frame, a.camera, *a.gt_identity) < std::make_tuple(b.frame, b.camera, *b.gt_identity);
  });
  for (std::size_t i = 0; i < ds.detections.size(); ++i) ds.detections[i].feature_id = static_cast<std::int64_t>(i);
  return ds;
}

}  // namespace cantrack::synth
