#include "cascade3d/sketch.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <vector>

#include "cascade3d/errors.hpp"

namespace cascade3d {

namespace {

struct GradientField {
  std::vector<double> gx, gy, gz, mag;
};

GradientField gradient_field(const Volume3& v, double sigma) {
  if (sigma < 0.0) throw ValidationError("gradient3d: sigma must be >= 0");
  const Shape3 s = v.shape();
  const auto smooth = blur_to_double(v, sigma);
  const std::size_t n = smooth.size();
  GradientField g{std::vector<double>(n), std::vector<double>(n), std::vector<double>(n), std::vector<double>(n)};
  auto at = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    z = std::clamp<std::int64_t>(z, 0, s.nz - 1);
    y = std::clamp<std::int64_t>(y, 0, s.ny - 1);
    x = std::clamp<std::int64_t>(x, 0, s.nx - 1);
    return smooth[(z * s.ny + y) * s.nx + x];
  };
#pragma omp parallel for schedule(static)
  for (std::int64_t z = 0; z < s.nz; ++z)
    for (std::int64_t y = 0; y < s.ny; ++y)
      for (std::int64_t x = 0; x < s.nx; ++x) {
        const std::size_t i = (z * s.ny + y) * s.nx + x;
        g.gx[i] = 0.5 * (at(z, y, x + 1) - at(z, y, x - 1));
        g.gy[i] = 0.5 * (at(z, y + 1, x) - at(z, y - 1, x));
        g.gz[i] = 0.5 * (at(z + 1, y, x) - at(z - 1, y, x));
        g.mag[i] = std::sqrt(g.gx[i] * g.gx[i] + g.gy[i] * g.gy[i] + g.gz[i] * g.gz[i]);
      }
  return g;
}

Volume3 to_volume(const std::vector<double>& data, const Volume3& like) {
  Volume3 out(like.shape(), like.spacing());
  auto dst = out.voxels();
  for (std::size_t i = 0; i < data.size(); ++i) dst[i] = static_cast<float>(data[i]);
  return out;
}

int quantize(double u) {
  // sin(22.5 deg): components below this snap to zero.
  constexpr double kSnap = 0.38268343236508978;
  if (u >= kSnap) return 1;
  if (u <= -kSnap) return -1;
  return 0;
}

}  // namespace

Gradient3 gradient3d(const Volume3& v, double sigma) {
  const auto g = gradient_field(v, sigma);
  return {to_volume(g.gx, v), to_volume(g.gy, v), to_volume(g.gz, v), to_volume(g.mag, v)};
}

Sketch canny3d(const Volume3& v, const CannyParams& params) {
  if (!(params.lo_pct > 0.0 && params.lo_pct < params.hi_pct && params.hi_pct < 1.0))
    throw ValidationError("canny3d requires 0 < lo_pct < hi_pct < 1");
  const Shape3 s = v.shape();
  Sketch result{Volume3(s, v.spacing()), false};
  const auto g = gradient_field(v, params.sigma);
  const double max_mag = *std::max_element(g.mag.begin(), g.mag.end());
  if (!(max_mag > 0.0)) {
    result.degenerate = true;
    return result;
  }
  const double floor_mag = max_mag * 1e-12;

  std::vector<double> nonzero;
  nonzero.reserve(g.mag.size());
  for (double m : g.mag)
    if (m > floor_mag) nonzero.push_back(m);
  const double hi = percentile(nonzero, params.hi_pct);
  const double lo = percentile(std::move(nonzero), params.lo_pct);

  auto mag_at = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    if (z < 0 || y < 0 || x < 0 || z >= s.nz || y >= s.ny || x >= s.nx) return 0.0;
    return g.mag[(z * s.ny + y) * s.nx + x];
  };

  // 0: rejected, 1: weak candidate, 2: strong.
  std::vector<std::uint8_t> state(g.mag.size(), 0);
#pragma omp parallel for schedule(static)
  for (std::int64_t z = 0; z < s.nz; ++z)
    for (std::int64_t y = 0; y < s.ny; ++y)
      for (std::int64_t x = 0; x < s.nx; ++x) {
        const std::size_t i = (z * s.ny + y) * s.nx + x;
        const double m = g.mag[i];
        if (m <= floor_mag || m < lo) continue;
        const int dz = quantize(g.gz[i] / m), dy = quantize(g.gy[i] / m), dx = quantize(g.gx[i] / m);
        // Ties resolve toward the negative side so plateaus keep one voxel.
        if (m >= mag_at(z + dz, y + dy, x + dx) && m > mag_at(z - dz, y - dy, x - dx))
          state[i] = m >= hi ? 2 : 1;
      }

  std::deque<std::int64_t> frontier;
  for (std::size_t i = 0; i < state.size(); ++i)
    if (state[i] == 2) frontier.push_back(static_cast<std::int64_t>(i));
  while (!frontier.empty()) {
    const std::int64_t i = frontier.front();
    frontier.pop_front();
    const std::int64_t z = i / (s.ny * s.nx), y = (i / s.nx) % s.ny, x = i % s.nx;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const std::int64_t zz = z + dz, yy = y + dy, xx = x + dx;
          if (zz < 0 || yy < 0 || xx < 0 || zz >= s.nz || yy >= s.ny || xx >= s.nx) continue;
          const std::int64_t j = (zz * s.ny + yy) * s.nx + xx;
          if (state[j] == 1) {
            state[j] = 2;
            frontier.push_back(j);
          }
        }
  }

  auto dst = result.field.voxels();
  for (std::size_t i = 0; i < state.size(); ++i)
    if (state[i] == 2) dst[i] = static_cast<float>(0.9 * g.mag[i] / max_mag);
  return result;
}

LabelTransform parse_label_transform(const std::string& name) {
  if (name == "identity") return LabelTransform::identity;
  if (name == "mirror-y") return LabelTransform::mirror_y;
  if (name == "scale-0.85") return LabelTransform::scale_down;
  if (name == "scale-1.15") return LabelTransform::scale_up;
  throw ValidationError("unknown label transform '" + name + "'");
}

std::string to_string(LabelTransform t) {
  switch (t) {
    case LabelTransform::identity: return "identity";
    case LabelTransform::mirror_y: return "mirror-y";
    case LabelTransform::scale_down: return "scale-0.85";
    case LabelTransform::scale_up: return "scale-1.15";
  }
  return "identity";
}

Volume3 transform_mask(const Volume3& mask, LabelTransform t) {
  const Shape3 s = mask.shape();
  std::array<double, 3> c{0, 0, 0};
  std::int64_t count = 0;
  for (std::int64_t z = 0; z < s.nz; ++z)
    for (std::int64_t y = 0; y < s.ny; ++y)
      for (std::int64_t x = 0; x < s.nx; ++x)
        if (mask(z, y, x) >= 0.5f) {
          c[0] += static_cast<double>(z);
          c[1] += static_cast<double>(y);
          c[2] += static_cast<double>(x);
          ++count;
        }
  Volume3 out(s, mask.spacing());
  if (count == 0) return out;
  for (double& ci : c) ci /= static_cast<double>(count);

  const double inv_scale = t == LabelTransform::scale_down ? 1.0 / 0.85 : (t == LabelTransform::scale_up ? 1.0 / 1.15 : 1.0);
  auto nearest = [](double q) { return static_cast<std::int64_t>(std::floor(q + 0.5)); };
  for (std::int64_t z = 0; z < s.nz; ++z)
    for (std::int64_t y = 0; y < s.ny; ++y)
      for (std::int64_t x = 0; x < s.nx; ++x) {
        std::array<double, 3> q{static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)};
        if (t == LabelTransform::mirror_y) {
          q[1] = 2.0 * c[1] - q[1];
        } else {
          for (int a = 0; a < 3; ++a) q[a] = c[a] + (q[a] - c[a]) * inv_scale;
        }
        const std::int64_t qz = nearest(q[0]), qy = nearest(q[1]), qx = nearest(q[2]);
        if (qz < 0 || qy < 0 || qx < 0 || qz >= s.nz || qy >= s.ny || qx >= s.nx) continue;
        if (mask(qz, qy, qx) >= 0.5f) out(z, y, x) = 1.0f;
      }
  return out;
}

Sketch overlay_labels(const Sketch& s, const Volume3& mask, LabelTransform t) {
  if (mask.shape() != s.field.shape())
    throw ValidationError("overlay_labels: mask shape " + to_string(mask.shape()) + " differs from sketch " +
                          to_string(s.field.shape()));
  Sketch out = s;
  const Volume3 moved = transform_mask(mask, t);
  auto dst = out.field.voxels();
  const auto src = moved.voxels();
  for (std::size_t i = 0; i < src.size(); ++i)
    if (src[i] >= 0.5f) dst[i] = kLabelValue;
  return out;
}

std::int64_t count_edge_voxels(const Sketch& s) {
  std::int64_t n = 0;
  for (float f : s.field.voxels())
    if (f > 0.0f && f <= kEdgeCeiling) ++n;
  return n;
}

}  // namespace cascade3d
