#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "cascade3d/volume.hpp"

namespace cascade3d {

enum class PhantomDomain { smooth, noisy };

std::string to_string(PhantomDomain d);
PhantomDomain parse_phantom_domain(const std::string& name);

struct Lesion {
  double radius = 6.0;
  std::array<double, 3> center{0.0, 0.0, 0.0};  // z, y, x in voxels
};

struct PhantomSpec {
  std::uint64_t seed = 0;
  std::int64_t side = 64;
  int n_blobs = 6;
  PhantomDomain domain = PhantomDomain::smooth;
  std::optional<Lesion> lesion;

  void validate() const;
};

nlohmann::ordered_json to_json(const PhantomSpec& spec);

struct Phantom {
  Volume3 volume;    // after appearance processing, in [0,1]
  Volume3 mask;      // 1 inside the lesion, 0 elsewhere
  Volume3 geometry;  // piecewise-constant intensities before appearance processing
};

// Random rotated ellipsoids, each with a nested inner shell, on a dark
// background. The geometry depends only on seed, side, n_blobs and lesion;
// the domain only changes appearance: smooth blurs with sigma 1, noisy applies
// multiplicative speckle (std 0.15) followed by unsharp masking.
Phantom gen_phantom(const PhantomSpec& spec);

}  // namespace cascade3d
