#include <doctest.h>

#include <string>

#include "cascade3d/errors.hpp"
#include "cascade3d/scale_plan.hpp"
#include "helpers.hpp"

using namespace cascade3d;

namespace {

// Counts, per voxel, how many paste regions claim it.
std::vector<int> ownership(Shape3 s, const std::vector<PatchJob>& jobs) {
  std::vector<int> owners(static_cast<std::size_t>(s.voxels()), 0);
  for (const auto& j : jobs) {
    const Box3& b = j.paste_region;
    for (std::int64_t z = b.lo[0]; z < b.hi(0); ++z)
      for (std::int64_t y = b.lo[1]; y < b.hi(1); ++y)
        for (std::int64_t x = b.lo[2]; x < b.hi(2); ++x) ++owners[static_cast<std::size_t>((z * s.ny + y) * s.nx + x)];
  }
  return owners;
}

void check_partition(const ScalePlan& plan, std::int64_t margin) {
  for (int i = 1; i <= plan.n_scales; ++i) {
    const auto jobs = patch_grid(plan, i, margin);
    const Shape3 s = plan.working_shape_at(i);
    std::int64_t total = 0;
    for (const auto& j : jobs) total += j.paste_region.voxels();
    CHECK(total == s.voxels());
    const auto owners = ownership(s, jobs);
    CHECK(std::all_of(owners.begin(), owners.end(), [](int n) { return n == 1; }));
  }
}

}  // namespace

TEST_SUITE("scale_plan") {
  TEST_CASE("a 512 cube needs one LR and three HR scales") {
    const ScalePlan p = plan_scales(Shape3::cube(512), 64, 32);
    CHECK(p.n_scales == 3);
    for (int i = 0; i <= 3; ++i) CHECK(p.working_shape_at(i) == Shape3::cube(64 << i));
    CHECK(p.lr_sketch_shape() == Shape3::cube(128));
  }

  TEST_CASE("a 64 cube is LR only") { CHECK(plan_scales(Shape3::cube(64), 64, 32).n_scales == 0); }

  TEST_CASE("BRATS-shaped volumes use two HR scales and crop back") {
    const ScalePlan p = plan_scales({155, 240, 240}, 64, 32);
    CHECK(p.n_scales == 2);
    CHECK(p.final_working_shape() == Shape3::cube(256));
    const Box3 c = p.crop_box();
    CHECK(c.shape() == Shape3{155, 240, 240});
    for (int a = 0; a < 3; ++a) {
      CHECK(c.lo[a] >= 0);
      CHECK(c.hi(a) <= 256);
    }
  }

  TEST_CASE("invalid plans are rejected") {
    CHECK_THROWS_AS(plan_scales({0, 4, 4}, 64, 32), ValidationError);
    CHECK_THROWS_AS(plan_scales(Shape3::cube(128), 64, 64), ValidationError);
    CHECK_THROWS_AS(plan_scales(Shape3::cube(128), 64, 30), ValidationError);
  }

  TEST_CASE("margin 0 on 128 gives 64 jobs with stride 32") {
    const ScalePlan p = plan_scales(Shape3::cube(128), 64, 32);
    const auto jobs = patch_grid(p, 1, 0);
    CHECK(jobs.size() == 64);
    CHECK(patch_starts(128, 32, 0) == std::vector<std::int64_t>{0, 32, 64, 96});
    for (const auto& j : jobs) CHECK(j.paste_region == j.out_region);
  }

  TEST_CASE("first job reads [-8,24) at the previous scale with low-side padding") {
    const ScalePlan p = plan_scales(Shape3::cube(128), 64, 32);
    const auto jobs = patch_grid(p, 1, 0);
    const PatchJob& j = jobs.front();
    CHECK(j.out_region == Box3{{0, 0, 0}, {32, 32, 32}});
    CHECK(j.in_region == Box3{{-8, -8, -8}, {32, 32, 32}});
    CHECK(j.needs_padding());
    CHECK(j.pad_low == std::array<std::int64_t, 3>{8, 8, 8});
    CHECK(j.pad_high == std::array<std::int64_t, 3>{0, 0, 0});
  }

  TEST_CASE("margin 4 on 128 gives 125 jobs that partition the volume") {
    const ScalePlan p = plan_scales(Shape3::cube(128), 64, 32);
    const auto jobs = patch_grid(p, 1, 4);
    CHECK(jobs.size() == 125);
    check_partition(p, 4);
  }

  TEST_CASE("paste regions partition every scale") {
    for (Shape3 s : {Shape3::cube(64), Shape3::cube(128), Shape3{155, 240, 240}, Shape3::cube(512)})
      for (std::int64_t m : {0, 4, 7}) check_partition(plan_scales(s, 64, 32), m);
    check_partition(plan_scales(Shape3::cube(256), 32, 16), 3);
  }

  TEST_CASE("in_region centre doubled equals out_region centre") {
    const ScalePlan p = plan_scales(Shape3::cube(256), 64, 32);
    for (int i = 1; i <= p.n_scales; ++i)
      for (std::int64_t m : {0, 4})
        for (const auto& j : patch_grid(p, i, m))
          for (int a = 0; a < 3; ++a) {
            // Centres in doubled coordinates avoid half voxels.
            CHECK(2 * (2 * j.in_region.lo[a] + j.in_region.size[a]) == 2 * j.out_region.lo[a] + j.out_region.size[a]);
            CHECK(j.in_region.lo[a] + j.in_region.size[a] / 4 == j.out_region.lo[a] / 2);
          }
  }

  TEST_CASE("margin too large is rejected") {
    const ScalePlan p = plan_scales(Shape3::cube(128), 64, 32);
    CHECK_THROWS_AS(patch_grid(p, 1, 16), ValidationError);
    CHECK_THROWS_AS(patch_grid(p, 2, 0), ValidationError);
    CHECK_THROWS_AS(patch_grid(p, 0, 0), ValidationError);
  }

  TEST_CASE("extract_patch copies interiors and replicates edges") {
    const Volume3 v = testing::random_volume(Shape3::cube(40), 6);
    const Volume3 p = extract_patch(v, Box3{{3, 5, 7}, {8, 8, 8}});
    for (std::int64_t z = 0; z < 8; ++z)
      for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t x = 0; x < 8; ++x) REQUIRE(p(z, y, x) == v(z + 3, y + 5, x + 7));

    const Volume3 c(Shape3::cube(40), {}, 0.25f);
    const Volume3 cp = extract_patch(c, Box3{{-2, -2, -2}, {32, 32, 32}});
    CHECK(cp.min() == 0.25f);
    CHECK(cp.max() == 0.25f);

    Volume3 ramp(Shape3::cube(40));
    for (std::int64_t z = 0; z < 40; ++z)
      for (std::int64_t y = 0; y < 40; ++y)
        for (std::int64_t x = 0; x < 40; ++x) ramp(z, y, x) = static_cast<float>(z * 1600 + y * 40 + x);
    const Box3 r{{30, 20, 28}, {16, 16, 16}};
    const Volume3 rp = extract_patch(ramp, r);
    for (std::int64_t z = 0; z < 16; ++z)
      for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x) {
          const std::int64_t zz = std::min<std::int64_t>(z + 30, 39), yy = std::min<std::int64_t>(y + 20, 39),
                             xx = std::min<std::int64_t>(x + 28, 39);
          REQUIRE(rp(z, y, x) == ramp(zz, yy, xx));
        }
  }

  TEST_CASE("assembling upsampled centres reproduces trilinear upsampling") {
    for (Shape3 shape : {Shape3::cube(128), Shape3{155, 240, 240}})
      for (std::int64_t m : {0, 4}) {
        const ScalePlan p = plan_scales(shape, 64, 32);
        Volume3 prev = testing::random_volume(p.working_shape_at(0), 13);
        for (int i = 1; i <= p.n_scales; ++i) {
          std::vector<GeneratedPatch> gen;
          for (const auto& j : patch_grid(p, i, m)) gen.push_back({j, upsample_center(extract_patch(prev, j.in_region))});
          const Volume3 out = assemble(p.working_shape_at(i), gen);
          CHECK(testing::max_abs_diff(out, resample_trilinear(prev, p.working_shape_at(i))) < 1e-6);
          prev = out;
        }
      }
  }

  TEST_CASE("a missing job is reported with its paste box") {
    const ScalePlan p = plan_scales(Shape3::cube(128), 64, 32);
    const auto jobs = patch_grid(p, 1, 4);
    Assembler a(Shape3::cube(128));
    for (std::size_t k = 0; k < jobs.size(); ++k)
      if (k != 17) a.paste(jobs[k], Volume3(jobs[k].out_region.shape()));
    try {
      (void)std::move(a).finish();
      FAIL("expected a coverage error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(to_string(jobs[17].paste_region)) != std::string::npos);
    }
  }

  TEST_CASE("each voxel is written once from its owner") {
    const ScalePlan p = plan_scales(Shape3::cube(128), 64, 32);
    const auto jobs = patch_grid(p, 1, 4);
    std::vector<GeneratedPatch> gen;
    for (std::size_t k = 0; k < jobs.size(); ++k)
      gen.push_back({jobs[k], testing::random_volume(jobs[k].out_region.shape(), 100 + k)});
    const Volume3 out = assemble(Shape3::cube(128), gen);
    for (const auto& g : gen) {
      const Box3& pr = g.job.paste_region;
      const Volume3 back = extract_patch(out, pr);
      Box3 local = pr;
      for (int a = 0; a < 3; ++a) local.lo[a] -= g.job.out_region.lo[a];
      CHECK(testing::max_abs_diff(back, extract_patch(g.patch, local)) == 0.0);
    }

    Assembler twice(Shape3::cube(128));
    twice.paste(jobs[0], gen[0].patch);
    CHECK_THROWS_AS(twice.paste(jobs[0], gen[0].patch), ValidationError);
  }

  TEST_CASE("plan JSON reports scales and job counts") {
    const auto j = plan_to_json(plan_scales(Shape3::cube(512), 64, 32), 4, false);
    CHECK(j["scales"].size() == 3);
    CHECK(j["working_shapes"].size() == 4);
    CHECK(j["scales"][0]["stride"] == 24);
    CHECK(j["scales"][0]["job_count"] == 125);
  }

  TEST_CASE("seam statistics of a smooth field are balanced") {
    const ScalePlan p = plan_scales(Shape3::cube(128), 64, 32);
    const auto jobs = patch_grid(p, 1, 0);
    Volume3 v(Shape3::cube(128));
    for (std::int64_t z = 0; z < 128; ++z)
      for (std::int64_t y = 0; y < 128; ++y)
        for (std::int64_t x = 0; x < 128; ++x) v(z, y, x) = static_cast<float>(x) / 128.0f;
    const SeamStats st = seam_statistics(v, jobs);
    CHECK(st.seam_pairs == 3 * 128 * 128 * 3);
    CHECK(st.ratio() == doctest::Approx(1.0).epsilon(1e-3));
  }
}
