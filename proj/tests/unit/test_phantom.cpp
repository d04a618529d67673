#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>

#include "cascade3d/errors.hpp"
#include "cascade3d/metrics.hpp"
#include "cascade3d/phantom.hpp"
#include "cascade3d/sketch.hpp"
#include "helpers.hpp"

using namespace cascade3d;

namespace {

// Mean within-region variance over voxels whose geometry value is constant in
// a 3x3x3 neighbourhood and above the background.
double interior_variance(const Phantom& p) {
  const Volume3& g = p.geometry;
  const Shape3 s = g.shape();
  std::map<float, std::pair<double, double>> sums;
  std::map<float, std::int64_t> counts;
  for (std::int64_t z = 1; z + 1 < s.nz; ++z)
    for (std::int64_t y = 1; y + 1 < s.ny; ++y)
      for (std::int64_t x = 1; x + 1 < s.nx; ++x) {
        const float c = g(z, y, x);
        if (c < 0.1f) continue;
        bool flat = true;
        for (int dz = -1; dz <= 1 && flat; ++dz)
          for (int dy = -1; dy <= 1 && flat; ++dy)
            for (int dx = -1; dx <= 1 && flat; ++dx) flat = g(z + dz, y + dy, x + dx) == c;
        if (!flat) continue;
        const double v = p.volume(z, y, x);
        sums[c].first += v;
        sums[c].second += v * v;
        ++counts[c];
      }
  double acc = 0;
  std::int64_t n = 0;
  for (const auto& [c, sv] : sums) {
    const double k = static_cast<double>(counts[c]);
    acc += sv.second - sv.first * sv.first / k;
    n += counts[c];
  }
  return acc / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("phantom") {
  TEST_CASE("both domains share geometry, mask and edges") {
    PhantomSpec s;
    s.seed = 12;
    s.lesion = Lesion{5.0, {30.0, 32.0, 34.0}};
    const Phantom smooth = gen_phantom(s);
    s.domain = PhantomDomain::noisy;
    const Phantom noisy = gen_phantom(s);
    CHECK(testing::max_abs_diff(smooth.geometry, noisy.geometry) == 0.0);
    CHECK(testing::max_abs_diff(smooth.mask, noisy.mask) == 0.0);
    const Sketch a = canny3d(smooth.geometry), b = canny3d(noisy.geometry);
    CHECK(testing::max_abs_diff(a.field, b.field) == 0.0);
    CHECK(testing::max_abs_diff(smooth.volume, noisy.volume) > 0.0);
  }

  TEST_CASE("generation is deterministic and bounded") {
    PhantomSpec s;
    s.seed = 4;
    s.domain = PhantomDomain::noisy;
    const Phantom a = gen_phantom(s), b = gen_phantom(s);
    CHECK(testing::max_abs_diff(a.volume, b.volume) == 0.0);
    CHECK(a.volume.min() >= 0.0f);
    CHECK(a.volume.max() <= 1.0f);
    s.seed = 5;
    CHECK(testing::max_abs_diff(gen_phantom(s).volume, a.volume) > 0.0);
  }

  TEST_CASE("smooth interiors vary less than noisy ones") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      PhantomSpec s;
      s.seed = seed;
      const double vs = interior_variance(gen_phantom(s));
      s.domain = PhantomDomain::noisy;
      const double vn = interior_variance(gen_phantom(s));
      CHECK(vs < vn);
    }
  }

  TEST_CASE("the two domains are structurally dissimilar") {
    double acc = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      PhantomSpec s;
      s.seed = 300 + seed;
      const Phantom smooth = gen_phantom(s);
      s.domain = PhantomDomain::noisy;
      acc += ssim3d(gen_phantom(s).volume, smooth.volume);
    }
    CHECK(acc / 5 < 0.7);
  }

  TEST_CASE("lesion volume follows the ball formula") {
    PhantomSpec s;
    s.lesion = Lesion{6.0, {31.5, 31.5, 31.5}};
    const Phantom p = gen_phantom(s);
    const double want = 4.0 / 3.0 * std::numbers::pi * 216.0;
    CHECK(std::abs(static_cast<double>(testing::count_nonzero(p.mask)) / want - 1.0) < 0.10);
    CHECK(p.volume(31, 31, 31) > 0.5f);
  }

  TEST_CASE("invalid specs are rejected") {
    PhantomSpec s;
    s.side = 48;
    CHECK_THROWS_AS(gen_phantom(s), ValidationError);
    s.side = 64;
    s.n_blobs = 0;
    CHECK_THROWS_AS(gen_phantom(s), ValidationError);
    s.n_blobs = 3;
    s.lesion = Lesion{6.0, {2.0, 30.0, 30.0}};
    CHECK_THROWS_AS(gen_phantom(s), ValidationError);
    CHECK_THROWS_AS(parse_phantom_domain("grainy"), ValidationError);
  }
}
