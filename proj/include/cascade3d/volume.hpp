#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cascade3d/memory_tracker.hpp"

namespace cascade3d {

struct Shape3 {
  std::int64_t nz = 0;
  std::int64_t ny = 0;
  std::int64_t nx = 0;

  std::int64_t voxels() const noexcept { return nz * ny * nx; }
  std::int64_t operator[](int axis) const noexcept { return axis == 0 ? nz : (axis == 1 ? ny : nx); }
  bool positive() const noexcept { return nz > 0 && ny > 0 && nx > 0; }
  static Shape3 cube(std::int64_t side) noexcept { return {side, side, side}; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& s);

struct Spacing3 {
  double sz = 1.0;
  double sy = 1.0;
  double sx = 1.0;
  friend bool operator==(const Spacing3&, const Spacing3&) = default;
};

// Dense scalar field, row-major with x fastest. Intensities are nominally in
// [0,1]; the type does not enforce it.
class Volume3 {
 public:
  Volume3() = default;
  explicit Volume3(Shape3 shape, Spacing3 spacing = {}, float fill = 0.0f);
  Volume3(Shape3 shape, Spacing3 spacing, std::span<const float> voxels);

  const Shape3& shape() const noexcept { return shape_; }
  const Spacing3& spacing() const noexcept { return spacing_; }
  std::int64_t size() const noexcept { return static_cast<std::int64_t>(voxels_.size()); }
  bool empty() const noexcept { return voxels_.empty(); }

  std::span<const float> voxels() const noexcept { return voxels_; }
  std::span<float> voxels() noexcept { return voxels_; }

  std::int64_t index(std::int64_t z, std::int64_t y, std::int64_t x) const noexcept {
    return (z * shape_.ny + y) * shape_.nx + x;
  }
  float operator()(std::int64_t z, std::int64_t y, std::int64_t x) const noexcept { return voxels_[index(z, y, x)]; }
  float& operator()(std::int64_t z, std::int64_t y, std::int64_t x) noexcept { return voxels_[index(z, y, x)]; }

  // Edge-replicated access; coordinates outside the grid clamp to the border.
  float clamped(std::int64_t z, std::int64_t y, std::int64_t x) const noexcept;

  float min() const;
  float max() const;

  void set_spacing(Spacing3 spacing);

 private:
  Shape3 shape_{};
  Spacing3 spacing_{};
  TrackedVector<float> voxels_;
};

// VOL1: "VOL1" | u32 LE header length | JSON header | f32 LE payload (x fastest).
void save_volume(const Volume3& v, const std::filesystem::path& path);
Volume3 load_volume(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_volume(const Volume3& v);
Volume3 decode_volume(std::span<const std::uint8_t> bytes);

// Half-voxel aligned trilinear resampling: voxel centres of the output grid
// are mapped to src = (dst + 0.5) * in / out - 0.5 and clamped to the input
// extent, so corner voxels land on corner voxels and 2x up/down scaling is
// consistent with the patch coordinate algebra. Spacing is rescaled so the
// physical extent is preserved.
Volume3 resample_trilinear(const Volume3& v, Shape3 target);

struct NormalizeResult {
  Volume3 volume;
  bool degenerate = false;
  double lo_value = 0.0;
  double hi_value = 0.0;
};

// Maps the lo_pct/hi_pct intensity percentiles to 0/1 and clamps to [0,1].
// Percentiles use linear interpolation between order statistics.
NormalizeResult normalize_intensity(const Volume3& v, double lo_pct = 0.005, double hi_pct = 0.995);

double percentile(std::vector<double> values, double fraction);

// Separable Gaussian smoothing with kernel truncated at ceil(3 sigma) and
// edge-replicated borders. sigma <= 0 returns a copy.
Volume3 gaussian_blur(const Volume3& v, double sigma);
std::vector<double> blur_to_double(const Volume3& v, double sigma);
std::vector<double> gaussian_kernel(double sigma);

// Zero-based axis-aligned box, half-open: [lo, lo + size).
struct Box3 {
  std::array<std::int64_t, 3> lo{0, 0, 0};
  std::array<std::int64_t, 3> size{0, 0, 0};

  std::int64_t hi(int axis) const noexcept { return lo[axis] + size[axis]; }
  std::int64_t voxels() const noexcept { return size[0] * size[1] * size[2]; }
  bool contains(std::int64_t z, std::int64_t y, std::int64_t x) const noexcept {
    return z >= lo[0] && z < hi(0) && y >= lo[1] && y < hi(1) && x >= lo[2] && x < hi(2);
  }
  Shape3 shape() const noexcept { return {size[0], size[1], size[2]}; }
  friend bool operator==(const Box3&, const Box3&) = default;
};

std::string to_string(const Box3& b);

// Centred placement of `v` inside a larger grid with edge replication.
Volume3 embed_centered(const Volume3& v, Shape3 target);
Box3 centered_crop_box(Shape3 outer, Shape3 inner);

}  // namespace cascade3d
