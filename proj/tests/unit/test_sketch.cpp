#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <queue>

#include "cascade3d/errors.hpp"
#include "cascade3d/sketch.hpp"
#include "helpers.hpp"

using namespace cascade3d;

namespace {

// 26-connected components of the nonzero voxels.
int count_components(const Volume3& v) {
  const Shape3 s = v.shape();
  std::vector<int> label(static_cast<std::size_t>(v.size()), 0);
  int n = 0;
  for (std::int64_t i = 0; i < v.size(); ++i) {
    if (v.voxels()[i] == 0.0f || label[i]) continue;
    ++n;
    std::queue<std::int64_t> q;
    q.push(i);
    label[i] = n;
    while (!q.empty()) {
      const std::int64_t j = q.front();
      q.pop();
      const std::int64_t z = j / (s.ny * s.nx), y = (j / s.nx) % s.ny, x = j % s.nx;
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const std::int64_t zz = z + dz, yy = y + dy, xx = x + dx;
            if (zz < 0 || yy < 0 || xx < 0 || zz >= s.nz || yy >= s.ny || xx >= s.nx) continue;
            const std::int64_t k = v.index(zz, yy, xx);
            if (v.voxels()[k] != 0.0f && !label[k]) {
              label[k] = n;
              q.push(k);
            }
          }
    }
  }
  return n;
}

std::vector<std::int64_t> nonzero_indices(const Volume3& v) {
  std::vector<std::int64_t> out;
  for (std::int64_t i = 0; i < v.size(); ++i)
    if (v.voxels()[i] != 0.0f) out.push_back(i);
  return out;
}

}  // namespace

TEST_SUITE("sketch") {
  TEST_CASE("gradient of a linear ramp is constant along x") {
    const std::int64_t nx = 20;
    Volume3 v(Shape3{6, 7, nx});
    for (std::int64_t z = 0; z < 6; ++z)
      for (std::int64_t y = 0; y < 7; ++y)
        for (std::int64_t x = 0; x < nx; ++x) v(z, y, x) = static_cast<float>(x) / static_cast<float>(nx);
    const auto g = gradient3d(v, 0.0);
    for (std::int64_t z = 0; z < 6; ++z)
      for (std::int64_t y = 0; y < 7; ++y)
        for (std::int64_t x = 1; x < nx - 1; ++x) {
          REQUIRE(g.gx(z, y, x) == doctest::Approx(1.0 / nx).epsilon(1e-6));
          REQUIRE(g.gy(z, y, x) == 0.0f);
          REQUIRE(g.gz(z, y, x) == 0.0f);
        }
  }

  TEST_CASE("constant volume has zero gradient and a degenerate empty sketch") {
    const Volume3 v(Shape3::cube(12), {}, 0.4f);
    const auto g = gradient3d(v, 1.0);
    CHECK(testing::count_nonzero(g.magnitude) == 0);
    const Sketch s = canny3d(v);
    CHECK(s.degenerate);
    CHECK(testing::count_nonzero(s.field) == 0);
  }

  TEST_CASE("gradient matches explicit gaussian and difference oracle") {
    const Volume3 v = testing::random_volume(Shape3::cube(16), 4);
    const double sigma = 1.0;
    const auto k = gaussian_kernel(sigma);
    const std::int64_t r = static_cast<std::int64_t>(k.size() / 2);
    const Shape3 s = v.shape();
    auto cl = [](std::int64_t i, std::int64_t n) { return std::clamp<std::int64_t>(i, 0, n - 1); };
    std::vector<double> sm(static_cast<std::size_t>(v.size()));
    for (std::int64_t z = 0; z < 16; ++z)
      for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x) {
          double acc = 0;
          for (std::int64_t a = -r; a <= r; ++a)
            for (std::int64_t b = -r; b <= r; ++b)
              for (std::int64_t c = -r; c <= r; ++c)
                acc += k[a + r] * k[b + r] * k[c + r] * v(cl(z + a, 16), cl(y + b, 16), cl(x + c, 16));
          sm[v.index(z, y, x)] = acc;
        }
    auto at = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
      return sm[v.index(cl(z, s.nz), cl(y, s.ny), cl(x, s.nx))];
    };
    const auto g = gradient3d(v, sigma);
    double m = 0;
    for (std::int64_t z = 0; z < 16; ++z)
      for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x) {
          const double gx = 0.5 * (at(z, y, x + 1) - at(z, y, x - 1));
          const double gy = 0.5 * (at(z, y + 1, x) - at(z, y - 1, x));
          const double gz = 0.5 * (at(z + 1, y, x) - at(z - 1, y, x));
          m = std::max({m, std::abs(gx - g.gx(z, y, x)), std::abs(gy - g.gy(z, y, x)), std::abs(gz - g.gz(z, y, x)),
                        std::abs(std::sqrt(gx * gx + gy * gy + gz * gz) - g.magnitude(z, y, x))});
        }
    CHECK(m < 1e-6);
  }

  TEST_CASE("edges of a ball lie on its surface") {
    const Volume3 v = testing::ball(Shape3::cube(48), 10.0);
    const Sketch s = canny3d(v, {1.0, 0.7, 0.9});
    CHECK_FALSE(s.degenerate);
    const double c = 23.5;
    std::int64_t edges = 0, near = 0;
    for (std::int64_t z = 0; z < 48; ++z)
      for (std::int64_t y = 0; y < 48; ++y)
        for (std::int64_t x = 0; x < 48; ++x) {
          if (s.field(z, y, x) == 0.0f) continue;
          ++edges;
          const double d = std::sqrt((z - c) * (z - c) + (y - c) * (y - c) + (x - c) * (x - c));
          near += std::abs(d - 10.0) <= 1.0;
        }
    CHECK(edges > 0);
    CHECK(static_cast<double>(near) >= 0.95 * static_cast<double>(edges));
  }

  TEST_CASE("nested balls give two disjoint shells") {
    Volume3 v = testing::ball(Shape3::cube(48), 15.0, 0.5);
    const Volume3 inner = testing::ball(Shape3::cube(48), 6.0, 1.0);
    for (std::int64_t i = 0; i < v.size(); ++i) v.voxels()[i] = std::max(v.voxels()[i], inner.voxels()[i]);
    const Sketch s = canny3d(v, {1.0, 0.5, 0.8});
    CHECK(count_components(s.field) == 2);
  }

  TEST_CASE("sketch values respect the edge band") {
    const Sketch s = canny3d(testing::random_volume(Shape3::cube(20), 9));
    CHECK(s.field.min() >= 0.0f);
    CHECK(s.field.max() <= kEdgeCeiling);
    CHECK(s.field.max() > 0.0f);
    CHECK_THROWS_AS(canny3d(s.field, {1.0, 0.9, 0.7}), ValidationError);
  }

  TEST_CASE("edge set is invariant to positive affine rescaling") {
    Volume3 v = testing::ball(Shape3::cube(32), 9.0, 1.0);
    const Volume3 core = testing::ball(Shape3::cube(32), 4.0, 1.0);
    for (std::int64_t i = 0; i < v.size(); ++i) v.voxels()[i] = v.voxels()[i] * 0.5f + core.voxels()[i] * 0.25f;
    Volume3 w = v;
    for (float& x : w.voxels()) x = 2.0f * x + 0.5f;
    CHECK(nonzero_indices(canny3d(v).field) == nonzero_indices(canny3d(w).field));
  }

  TEST_CASE("empty mask leaves the sketch unchanged") {
    const Sketch s = canny3d(testing::ball(Shape3::cube(24), 6.0));
    const Sketch o = overlay_labels(s, Volume3(s.field.shape()), LabelTransform::scale_up);
    CHECK(testing::max_abs_diff(o.field, s.field) == 0.0);
    CHECK_THROWS_AS(overlay_labels(s, Volume3(Shape3::cube(8)), LabelTransform::identity), ValidationError);
  }

  TEST_CASE("overlay sets exactly the mask voxels to the label value") {
    const Sketch s = canny3d(testing::ball(Shape3::cube(32), 10.0));
    Volume3 mask(s.field.shape());
    for (std::int64_t z = 4; z < 10; ++z)
      for (std::int64_t y = 5; y < 12; ++y)
        for (std::int64_t x = 20; x < 26; ++x) mask(z, y, x) = 1.0f;
    const Sketch o = overlay_labels(s, mask);
    for (std::int64_t i = 0; i < mask.size(); ++i) {
      if (mask.voxels()[i] != 0.0f) REQUIRE(o.field.voxels()[i] == kLabelValue);
      else REQUIRE(o.field.voxels()[i] == s.field.voxels()[i]);
    }
    CHECK(count_edge_voxels(o) <= count_edge_voxels(s));
  }

  TEST_CASE("mirror-y twice is the identity") {
    Volume3 mask(Shape3{16, 20, 16});
    for (std::int64_t z = 3; z < 9; ++z)
      for (std::int64_t y = 2; y < 13; ++y)
        for (std::int64_t x = 5; x < 7 + y / 3; ++x) mask(z, y, x) = 1.0f;
    const Volume3 once = transform_mask(mask, LabelTransform::mirror_y);
    CHECK(testing::max_abs_diff(once, mask) > 0.0);
    const Volume3 twice = transform_mask(once, LabelTransform::mirror_y);
    CHECK(nonzero_indices(twice) == nonzero_indices(mask));
  }

  TEST_CASE("uniform scaling changes label volume by the cube of the factor") {
    const Volume3 mask = testing::ball(Shape3::cube(40), 8.0);
    const double n0 = static_cast<double>(testing::count_nonzero(mask));
    const double up = static_cast<double>(testing::count_nonzero(transform_mask(mask, LabelTransform::scale_up)));
    const double down = static_cast<double>(testing::count_nonzero(transform_mask(mask, LabelTransform::scale_down)));
    CHECK(std::abs(up / (n0 * std::pow(1.15, 3)) - 1.0) < 0.10);
    CHECK(std::abs(down / (n0 * std::pow(0.85, 3)) - 1.0) < 0.10);

    Sketch empty{Volume3(mask.shape()), false};
    CHECK(testing::count_nonzero(overlay_labels(empty, mask, LabelTransform::scale_up).field) == static_cast<std::int64_t>(up));
  }

  TEST_CASE("label transform names round trip") {
    for (auto t : {LabelTransform::identity, LabelTransform::mirror_y, LabelTransform::scale_down, LabelTransform::scale_up})
      CHECK(parse_label_transform(to_string(t)) == t);
    CHECK_THROWS_AS(parse_label_transform("rotate"), ValidationError);
  }
}
