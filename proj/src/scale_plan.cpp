#include "cascade3d/scale_plan.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "cascade3d/errors.hpp"

namespace cascade3d {

Box3 ScalePlan::crop_box() const { return centered_crop_box(final_working_shape(), original_shape); }

ScalePlan plan_scales(Shape3 original_shape, std::int64_t lr_side, std::int64_t patch_side) {
  if (!original_shape.positive()) throw ValidationError("original shape must be positive");
  if (lr_side <= 0 || patch_side <= 0) throw ValidationError("lr_side and patch_side must be positive");
  if (patch_side >= lr_side) throw ValidationError("patch_side must be smaller than lr_side");
  // The in_region offset out/2 - patch/4 must be integral.
  if (patch_side % 4 != 0) throw ValidationError("patch_side must be a multiple of 4");

  ScalePlan plan;
  plan.original_shape = original_shape;
  plan.lr_side = lr_side;
  plan.patch_side = patch_side;
  for (int a = 0; a < 3; ++a) {
    int n = 0;
    while ((lr_side << n) < original_shape[a]) ++n;
    plan.n_scales = std::max(plan.n_scales, n);
  }
  return plan;
}

std::vector<std::int64_t> patch_starts(std::int64_t side, std::int64_t patch_side, std::int64_t margin) {
  if (margin < 0 || 2 * margin >= patch_side)
    throw ValidationError("valid margin " + std::to_string(margin) + " leaves an empty paste region for patch side " +
                          std::to_string(patch_side));
  if (side < patch_side) throw ValidationError("scale side smaller than patch side");
  const std::int64_t stride = patch_side - 2 * margin;
  const std::int64_t count = (side - 2 * margin + stride - 1) / stride;
  std::vector<std::int64_t> starts;
  starts.reserve(static_cast<std::size_t>(count));
  for (std::int64_t k = 0; k < count; ++k) starts.push_back(std::min(k * stride, side - patch_side));
  return starts;
}

std::vector<PatchJob> patch_grid(const ScalePlan& plan, int scale, std::int64_t valid_margin) {
  if (scale < 1 || scale > plan.n_scales)
    throw ValidationError("patch_grid: scale " + std::to_string(scale) + " outside [1, " +
                          std::to_string(plan.n_scales) + "]");
  const std::int64_t side = plan.side_at(scale);
  const std::int64_t prev_side = plan.side_at(scale - 1);
  const std::int64_t p = plan.patch_side;
  const auto starts = patch_starts(side, p, valid_margin);
  const auto k = static_cast<std::int64_t>(starts.size());

  struct Axis {
    std::int64_t out_lo, paste_lo, paste_hi;
  };
  std::vector<Axis> axis(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    axis[i].out_lo = starts[i];
    axis[i].paste_lo = i == 0 ? 0 : starts[i] + valid_margin;
    axis[i].paste_hi = i == k - 1 ? side : starts[i + 1] + valid_margin;
  }

  std::vector<PatchJob> jobs;
  jobs.reserve(static_cast<std::size_t>(k * k * k));
  for (std::int64_t iz = 0; iz < k; ++iz)
    for (std::int64_t iy = 0; iy < k; ++iy)
      for (std::int64_t ix = 0; ix < k; ++ix) {
        const std::array<const Axis*, 3> ax{&axis[iz], &axis[iy], &axis[ix]};
        PatchJob job;
        job.scale = scale;
        job.valid_margin = valid_margin;
        for (int a = 0; a < 3; ++a) {
          job.out_region.lo[a] = ax[a]->out_lo;
          job.out_region.size[a] = p;
          job.paste_region.lo[a] = ax[a]->paste_lo;
          job.paste_region.size[a] = ax[a]->paste_hi - ax[a]->paste_lo;
          job.in_region.lo[a] = ax[a]->out_lo / 2 - p / 4;
          job.in_region.size[a] = p;
          job.pad_low[a] = std::max<std::int64_t>(0, -job.in_region.lo[a]);
          job.pad_high[a] = std::max<std::int64_t>(0, job.in_region.hi(a) - prev_side);
        }
        jobs.push_back(job);
      }
  return jobs;
}

Volume3 extract_patch(const Volume3& v, const Box3& region) {
  Volume3 out(region.shape(), v.spacing());
  const Shape3 s = v.shape();
  for (std::int64_t z = 0; z < region.size[0]; ++z) {
    const std::int64_t sz = std::clamp<std::int64_t>(region.lo[0] + z, 0, s.nz - 1);
    for (std::int64_t y = 0; y < region.size[1]; ++y) {
      const std::int64_t sy = std::clamp<std::int64_t>(region.lo[1] + y, 0, s.ny - 1);
      const float* row = v.voxels().data() + (sz * s.ny + sy) * s.nx;
      float* dst = out.voxels().data() + (z * region.size[1] + y) * region.size[2];
      for (std::int64_t x = 0; x < region.size[2]; ++x)
        dst[x] = row[std::clamp<std::int64_t>(region.lo[2] + x, 0, s.nx - 1)];
    }
  }
  return out;
}

Volume3 upsample_center(const Volume3& in_patch) {
  const Shape3 s = in_patch.shape();
  if (s.nz % 4 != 0 || s.ny % 4 != 0 || s.nx % 4 != 0)
    throw ValidationError("upsample_center needs patch sides divisible by 4");
  // Output voxel k of the 2x grid samples src = (k + 0.5) / 2 - 0.5; the
  // central half k in [n/2, 3n/2) never reaches the clamped border.
  struct Taps {
    std::vector<std::int64_t> i0;
    std::vector<double> w;
  };
  auto taps = [](std::int64_t n) {
    Taps t;
    for (std::int64_t k = n / 2; k < n / 2 + n; ++k) {
      const double src = (static_cast<double>(k) + 0.5) * 0.5 - 0.5;
      const auto lo = static_cast<std::int64_t>(std::floor(src));
      t.i0.push_back(lo);
      t.w.push_back(src - static_cast<double>(lo));
    }
    return t;
  };
  const Taps tz = taps(s.nz), ty = taps(s.ny), tx = taps(s.nx);
  const Spacing3 sp{in_patch.spacing().sz / 2, in_patch.spacing().sy / 2, in_patch.spacing().sx / 2};
  Volume3 out(s, sp);
  const auto src = in_patch.voxels();
  for (std::int64_t z = 0; z < s.nz; ++z) {
    const double wz = tz.w[z];
    for (std::int64_t y = 0; y < s.ny; ++y) {
      const double wy = ty.w[y];
      const std::int64_t r00 = (tz.i0[z] * s.ny + ty.i0[y]) * s.nx;
      const std::int64_t r01 = (tz.i0[z] * s.ny + ty.i0[y] + 1) * s.nx;
      const std::int64_t r10 = ((tz.i0[z] + 1) * s.ny + ty.i0[y]) * s.nx;
      const std::int64_t r11 = ((tz.i0[z] + 1) * s.ny + ty.i0[y] + 1) * s.nx;
      for (std::int64_t x = 0; x < s.nx; ++x) {
        const double wx = tx.w[x];
        const std::int64_t a = tx.i0[x], b = a + 1;
        const double c00 = src[r00 + a] + wx * (static_cast<double>(src[r00 + b]) - src[r00 + a]);
        const double c01 = src[r01 + a] + wx * (static_cast<double>(src[r01 + b]) - src[r01 + a]);
        const double c10 = src[r10 + a] + wx * (static_cast<double>(src[r10 + b]) - src[r10 + a]);
        const double c11 = src[r11 + a] + wx * (static_cast<double>(src[r11 + b]) - src[r11 + a]);
        const double c0 = c00 + wy * (c01 - c00);
        const double c1 = c10 + wy * (c11 - c10);
        out(z, y, x) = static_cast<float>(c0 + wz * (c1 - c0));
      }
    }
  }
  return out;
}

namespace {

bool overlaps(const Box3& a, const Box3& b) {
  for (int i = 0; i < 3; ++i)
    if (a.hi(i) <= b.lo[i] || b.hi(i) <= a.lo[i]) return false;
  return true;
}

bool inside(const Box3& inner, const Box3& outer) {
  for (int i = 0; i < 3; ++i)
    if (inner.lo[i] < outer.lo[i] || inner.hi(i) > outer.hi(i)) return false;
  return true;
}

}  // namespace

Assembler::Assembler(Shape3 shape, Spacing3 spacing) : volume_(shape, spacing) {}

void Assembler::paste(const PatchJob& job, const Volume3& patch) {
  if (patch.shape() != job.out_region.shape())
    throw ValidationError("patch shape " + to_string(patch.shape()) + " does not match out region " +
                          to_string(job.out_region));
  if (!inside(job.paste_region, job.out_region)) throw ValidationError("paste region outside out region");
  const Box3 whole{{0, 0, 0}, {volume_.shape().nz, volume_.shape().ny, volume_.shape().nx}};
  if (!inside(job.paste_region, whole))
    throw ValidationError("paste region " + to_string(job.paste_region) + " outside volume");
  for (const Box3& w : written_)
    if (overlaps(w, job.paste_region))
      throw ValidationError("paste region " + to_string(job.paste_region) + " overlaps " + to_string(w));
  written_.push_back(job.paste_region);

  const Box3& r = job.paste_region;
  for (std::int64_t z = r.lo[0]; z < r.hi(0); ++z)
    for (std::int64_t y = r.lo[1]; y < r.hi(1); ++y) {
      const float* src = patch.voxels().data() +
                         patch.index(z - job.out_region.lo[0], y - job.out_region.lo[1], r.lo[2] - job.out_region.lo[2]);
      std::copy(src, src + r.size[2], &volume_(z, y, r.lo[2]));
    }
}

Volume3 Assembler::finish() && {
  const Shape3 s = volume_.shape();
  std::array<std::vector<std::int64_t>, 3> cuts;
  for (int a = 0; a < 3; ++a) {
    std::set<std::int64_t> c{0, s[a]};
    for (const Box3& b : written_) {
      c.insert(b.lo[a]);
      c.insert(b.hi(a));
    }
    cuts[a].assign(c.begin(), c.end());
  }
  std::vector<Box3> missing;
  for (std::size_t iz = 0; iz + 1 < cuts[0].size(); ++iz)
    for (std::size_t iy = 0; iy + 1 < cuts[1].size(); ++iy)
      for (std::size_t ix = 0; ix + 1 < cuts[2].size(); ++ix) {
        const Box3 cell{{cuts[0][iz], cuts[1][iy], cuts[2][ix]},
                        {cuts[0][iz + 1] - cuts[0][iz], cuts[1][iy + 1] - cuts[1][iy], cuts[2][ix + 1] - cuts[2][ix]}};
        const bool covered =
            std::any_of(written_.begin(), written_.end(), [&](const Box3& b) { return inside(cell, b); });
        if (!covered) missing.push_back(cell);
      }
  if (!missing.empty()) {
    std::ostringstream os;
    os << "coverage error: " << missing.size() << " uncovered box(es), first " << to_string(missing.front());
    throw ValidationError(os.str());
  }
  return std::move(volume_);
}

Volume3 assemble(Shape3 shape, std::span<const GeneratedPatch> jobs, Spacing3 spacing) {
  Assembler assembler(shape, spacing);
  for (const auto& j : jobs) assembler.paste(j.job, j.patch);
  return std::move(assembler).finish();
}

SeamStats seam_statistics(const Volume3& v, std::span<const PatchJob> jobs) {
  const Shape3 s = v.shape();
  std::array<std::vector<bool>, 3> seam;
  for (int a = 0; a < 3; ++a) seam[a].assign(static_cast<std::size_t>(s[a]), false);
  for (const auto& j : jobs)
    for (int a = 0; a < 3; ++a)
      if (j.paste_region.lo[a] > 0 && j.paste_region.lo[a] < s[a]) seam[a][j.paste_region.lo[a]] = true;

  SeamStats st;
  double seam_sum = 0.0, interior_sum = 0.0;
  for (std::int64_t z = 0; z < s.nz; ++z)
    for (std::int64_t y = 0; y < s.ny; ++y)
      for (std::int64_t x = 0; x < s.nx; ++x) {
        const double c = v(z, y, x);
        const std::array<std::int64_t, 3> p{z, y, x};
        for (int a = 0; a < 3; ++a) {
          if (p[a] + 1 >= s[a]) continue;
          const double n = a == 0 ? v(z + 1, y, x) : (a == 1 ? v(z, y + 1, x) : v(z, y, x + 1));
          const double d = std::abs(n - c);
          if (seam[a][p[a] + 1]) {
            seam_sum += d;
            ++st.seam_pairs;
          } else {
            interior_sum += d;
            ++st.interior_pairs;
          }
        }
      }
  st.seam_jump = st.seam_pairs ? seam_sum / static_cast<double>(st.seam_pairs) : 0.0;
  st.interior_jump = st.interior_pairs ? interior_sum / static_cast<double>(st.interior_pairs) : 0.0;
  return st;
}

namespace {

nlohmann::ordered_json box_json(const Box3& b) {
  return {{"lo", {b.lo[0], b.lo[1], b.lo[2]}}, {"size", {b.size[0], b.size[1], b.size[2]}}};
}

nlohmann::ordered_json shape_json(const Shape3& s) { return {s.nz, s.ny, s.nx}; }

}  // namespace

nlohmann::ordered_json plan_to_json(const ScalePlan& plan, std::int64_t valid_margin, bool include_jobs) {
  nlohmann::ordered_json j;
  j["original_shape"] = shape_json(plan.original_shape);
  j["lr_side"] = plan.lr_side;
  j["patch_side"] = plan.patch_side;
  j["n_scales"] = plan.n_scales;
  j["lr_sketch_shape"] = shape_json(plan.lr_sketch_shape());
  j["valid_margin"] = valid_margin;
  j["working_shapes"] = nlohmann::ordered_json::array();
  for (int i = 0; i <= plan.n_scales; ++i) j["working_shapes"].push_back(shape_json(plan.working_shape_at(i)));
  j["crop_box"] = box_json(plan.crop_box());
  j["scales"] = nlohmann::ordered_json::array();
  for (int i = 1; i <= plan.n_scales; ++i) {
    const auto jobs = patch_grid(plan, i, valid_margin);
    nlohmann::ordered_json sj;
    sj["scale"] = i;
    sj["stride"] = plan.patch_side - 2 * valid_margin;
    sj["job_count"] = jobs.size();
    if (include_jobs) {
      sj["jobs"] = nlohmann::ordered_json::array();
      for (const auto& job : jobs) {
        nlohmann::ordered_json jj;
        jj["out_region"] = box_json(job.out_region);
        jj["in_region"] = box_json(job.in_region);
        jj["paste_region"] = box_json(job.paste_region);
        jj["pad_low"] = {job.pad_low[0], job.pad_low[1], job.pad_low[2]};
        jj["pad_high"] = {job.pad_high[0], job.pad_high[1], job.pad_high[2]};
        sj["jobs"].push_back(std::move(jj));
      }
    }
    j["scales"].push_back(std::move(sj));
  }
  return j;
}

}  // namespace cascade3d
