#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cascade3d/volume.hpp"

namespace cascade3d {

// Scale ladder s_0..s_n. Scale i is an isotropic cube of side lr_side * 2^i;
// the last one is cropped back to the original shape.
struct ScalePlan {
  Shape3 original_shape;
  std::int64_t lr_side = 64;
  std::int64_t patch_side = 32;
  int n_scales = 0;

  std::int64_t side_at(int scale) const noexcept { return lr_side << scale; }
  Shape3 working_shape_at(int scale) const noexcept { return Shape3::cube(side_at(scale)); }
  Shape3 final_working_shape() const noexcept { return working_shape_at(n_scales); }
  // The LR generator consumes a sketch at twice the LR resolution.
  Shape3 lr_sketch_shape() const noexcept { return Shape3::cube(2 * lr_side); }
  // Where original_shape sits inside the final working volume.
  Box3 crop_box() const;
};

ScalePlan plan_scales(Shape3 original_shape, std::int64_t lr_side = 64, std::int64_t patch_side = 32);

struct PatchJob {
  int scale = 1;
  Box3 out_region;    // at scale i, side patch_side
  Box3 in_region;     // at scale i-1, side patch_side, centred on out_region / 2
  Box3 paste_region;  // subset of out_region owned by this job
  std::int64_t valid_margin = 0;
  // Voxels of in_region outside the scale i-1 grid on each side; filled by
  // edge replication when extracted.
  std::array<std::int64_t, 3> pad_low{0, 0, 0};
  std::array<std::int64_t, 3> pad_high{0, 0, 0};

  bool needs_padding() const noexcept {
    for (int a = 0; a < 3; ++a)
      if (pad_low[a] > 0 || pad_high[a] > 0) return true;
    return false;
  }
};

// Per-axis output starts: k * stride clamped to side - patch_side, with
// stride = patch_side - 2 * margin. Ownership boundaries sit at the start of
// each later job's valid band, so the later job owns any overlap; the outer
// faces are owned by the first and last jobs.
std::vector<std::int64_t> patch_starts(std::int64_t side, std::int64_t patch_side, std::int64_t margin);

std::vector<PatchJob> patch_grid(const ScalePlan& plan, int scale, std::int64_t valid_margin);

// Copies `region` out of `v` with edge replication outside the grid.
Volume3 extract_patch(const Volume3& v, const Box3& region);

// Central half of the 2x trilinear upsampling of a scale i-1 patch: the
// previous-scale input of an HR generator, aligned with the job's out_region.
Volume3 upsample_center(const Volume3& in_patch);

// Seam-free reassembly: each paste region is written exactly once, with no
// blending. finish() verifies the regions tile the volume.
class Assembler {
 public:
  explicit Assembler(Shape3 shape, Spacing3 spacing = {});

  // `patch` covers job.out_region; only job.paste_region is written.
  void paste(const PatchJob& job, const Volume3& patch);
  Volume3 finish() &&;

  const Volume3& volume() const noexcept { return volume_; }

 private:
  Volume3 volume_;
  std::vector<Box3> written_;
};

struct GeneratedPatch {
  PatchJob job;
  Volume3 patch;
};

Volume3 assemble(Shape3 shape, std::span<const GeneratedPatch> jobs, Spacing3 spacing = {});

struct SeamStats {
  double seam_jump = 0.0;      // mean |v(p+e) - v(p)| across paste faces
  double interior_jump = 0.0;  // same, for all other neighbour pairs
  std::int64_t seam_pairs = 0;
  std::int64_t interior_pairs = 0;
  double ratio() const noexcept { return interior_jump > 0.0 ? seam_jump / interior_jump : 0.0; }
};

SeamStats seam_statistics(const Volume3& v, std::span<const PatchJob> jobs);

nlohmann::ordered_json plan_to_json(const ScalePlan& plan, std::int64_t valid_margin, bool include_jobs = true);

}  // namespace cascade3d
