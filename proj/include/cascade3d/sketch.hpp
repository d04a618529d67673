#pragma once

#include <cstdint>
#include <string>

#include "cascade3d/volume.hpp"

namespace cascade3d {

// Conditioning field: 0 off-edge, (0, kEdgeCeiling] on edges weighted by
// gradient magnitude, exactly kLabelValue where a label mask was overlaid.
struct Sketch {
  Volume3 field;
  bool degenerate = false;
};

inline constexpr float kEdgeCeiling = 0.9f;
inline constexpr float kLabelValue = 1.0f;

struct Gradient3 {
  Volume3 gx, gy, gz, magnitude;
};

// Gaussian smoothing (truncated at 3 sigma, edge-replicated) followed by
// central differences per axis, in voxel units.
Gradient3 gradient3d(const Volume3& v, double sigma);

struct CannyParams {
  double sigma = 1.0;
  double lo_pct = 0.70;
  double hi_pct = 0.90;
};

// 3D Canny: gradient, non-maximum suppression along the gradient direction
// quantised to the 26-neighbourhood, and hysteresis with thresholds at the
// lo/hi percentiles of nonzero magnitudes. Survivors carry
// 0.9 * magnitude / max magnitude.
Sketch canny3d(const Volume3& v, const CannyParams& params = {});

enum class LabelTransform { identity, mirror_y, scale_down, scale_up };

LabelTransform parse_label_transform(const std::string& name);
std::string to_string(LabelTransform t);

// Applies `t` about the mask centroid with nearest-neighbour resampling.
// scale_down/scale_up are uniform scalings by 0.85 and 1.15.
Volume3 transform_mask(const Volume3& mask, LabelTransform t);

// Sets voxels where the transformed mask is nonzero to kLabelValue. Empty masks
// return the sketch unchanged.
Sketch overlay_labels(const Sketch& s, const Volume3& mask, LabelTransform t = LabelTransform::identity);

// Edge voxels (0 < value <= kEdgeCeiling) counted; label voxels excluded.
std::int64_t count_edge_voxels(const Sketch& s);

}  // namespace cascade3d
