#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "cascade3d/volume.hpp"

namespace testing {

inline cascade3d::Volume3 random_volume(cascade3d::Shape3 s, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  cascade3d::Volume3 v(s);
  for (float& x : v.voxels()) x = u(rng);
  return v;
}

inline cascade3d::Volume3 ball(cascade3d::Shape3 s, double radius, double value = 1.0) {
  cascade3d::Volume3 v(s);
  const double cz = (s.nz - 1) / 2.0, cy = (s.ny - 1) / 2.0, cx = (s.nx - 1) / 2.0;
  for (std::int64_t z = 0; z < s.nz; ++z)
    for (std::int64_t y = 0; y < s.ny; ++y)
      for (std::int64_t x = 0; x < s.nx; ++x) {
        const double d = std::sqrt((z - cz) * (z - cz) + (y - cy) * (y - cy) + (x - cx) * (x - cx));
        if (d <= radius) v(z, y, x) = static_cast<float>(value);
      }
  return v;
}

inline double max_abs_diff(const cascade3d::Volume3& a, const cascade3d::Volume3& b) {
  double m = 0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.voxels()[i]) - static_cast<double>(b.voxels()[i])));
  return m;
}

inline std::int64_t count_nonzero(const cascade3d::Volume3& v) {
  std::int64_t n = 0;
  for (float x : v.voxels()) n += x != 0.0f;
  return n;
}

}  // namespace testing
