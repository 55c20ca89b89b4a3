#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>

#include "cantrack/error.hpp"

namespace cantrack {

using FeatureVector = Eigen::VectorXd;

// Axis-aligned box, top-left corner plus size, in pixels.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  double center_x() const { return x + 0.5 * w; }
  double center_y() const { return y + 0.5 * h; }
  bool valid() const { return w > 0.0 && h > 0.0; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

// Per-detection metadata fed to EvalNet. x, y are the box center.
struct DetectionMeta {
  double w = 0.0;
  double h = 0.0;
  double x = 0.0;
  double y = 0.0;
  int cam_id = 1;

  static DetectionMeta from_box(const BBox& b, int camera) {
    return {b.w, b.h, b.center_x(), b.center_y(), camera};
  }
};

// Scales used to bring metadata into (0, 1].
struct MetaContext {
  double frame_width = 1920.0;
  double frame_height = 1080.0;
  int num_cameras = 8;

  void validate() const {
    if (!(frame_width > 0.0) || !(frame_height > 0.0)) throw ValidationError("frame size must be positive");
    if (num_cameras < 1) throw ValidationError("num_cameras must be >= 1");
  }
};

struct Detection {
  int camera = 1;
  std::int64_t frame = 0;
  BBox box;
  std::int64_t feature_id = 0;
  FeatureVector feature;
  std::optional<int> gt_identity;

  DetectionMeta meta() const { return DetectionMeta::from_box(box, camera); }
};

}  // namespace cantrack
