#include "cascade3d/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cascade3d/errors.hpp"

namespace cascade3d {

namespace {

constexpr float kBackground = 0.05f;
constexpr float kLesionValue = 0.95f;
constexpr double kSpeckleStd = 0.15;
constexpr double kSharpenAmount = 2.0;

struct Ellipsoid {
  std::array<double, 3> c;
  std::array<double, 3> r;
  std::array<std::array<double, 3>, 3> rot;  // rows: body axes in volume coordinates
  float outer, inner;
};

std::array<std::array<double, 3>, 3> random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  double q[4];
  double norm = 0.0;
  for (double& v : q) {
    v = n(rng);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : q) v /= norm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
           {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
           {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
}

// Squared normalised radius of p in the ellipsoid's body frame.
double body_radius2(const Ellipsoid& e, double z, double y, double x) {
  const double d[3] = {z - e.c[0], y - e.c[1], x - e.c[2]};
  double acc = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double u = e.rot[a][0] * d[0] + e.rot[a][1] * d[1] + e.rot[a][2] * d[2];
    acc += (u / e.r[a]) * (u / e.r[a]);
  }
  return acc;
}

}  // namespace

std::string to_string(PhantomDomain d) { return d == PhantomDomain::smooth ? "smooth" : "noisy"; }

PhantomDomain parse_phantom_domain(const std::string& name) {
  if (name == "smooth") return PhantomDomain::smooth;
  if (name == "noisy") return PhantomDomain::noisy;
  throw ValidationError("unknown phantom domain '" + name + "' (expected smooth or noisy)");
}

void PhantomSpec::validate() const {
  if (side < 64 || (side & (side - 1)) != 0) throw ValidationError("phantom side must be a power of two >= 64");
  if (n_blobs < 1) throw ValidationError("phantom needs at least one blob");
  if (lesion) {
    if (!(lesion->radius > 0.0)) throw ValidationError("lesion radius must be positive");
    for (double c : lesion->center)
      if (c - lesion->radius < 0.0 || c + lesion->radius > static_cast<double>(side - 1))
        throw ValidationError("lesion ball extends outside the volume");
  }
}

nlohmann::ordered_json to_json(const PhantomSpec& spec) {
  nlohmann::ordered_json j;
  j["seed"] = spec.seed;
  j["side"] = spec.side;
  j["n_blobs"] = spec.n_blobs;
  j["domain"] = to_string(spec.domain);
  if (spec.lesion) j["lesion"] = {{"radius", spec.lesion->radius}, {"center", spec.lesion->center}};
  else j["lesion"] = nullptr;
  return j;
}

Phantom gen_phantom(const PhantomSpec& spec) {
  spec.validate();
  const std::int64_t n = spec.side;
  const double s = static_cast<double>(n);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<float> levels(static_cast<std::size_t>(spec.n_blobs));
  for (int b = 0; b < spec.n_blobs; ++b)
    levels[static_cast<std::size_t>(b)] = static_cast<float>(0.3 + 0.6 * (b + 0.5) / spec.n_blobs);
  std::shuffle(levels.begin(), levels.end(), rng);

  std::vector<Ellipsoid> blobs;
  for (int b = 0; b < spec.n_blobs; ++b) {
    Ellipsoid e;
    for (auto& c : e.c) c = s * (0.25 + 0.5 * unit(rng));
    for (auto& r : e.r) r = s * (0.10 + 0.12 * unit(rng));
    e.rot = random_rotation(rng);
    e.outer = levels[static_cast<std::size_t>(b)];
    e.inner = static_cast<float>(e.outer * (0.45 + 0.3 * unit(rng)));
    blobs.push_back(e);
  }

  Phantom p{Volume3(Shape3::cube(n), {}, kBackground), Volume3(Shape3::cube(n)), Volume3()};
  Volume3& g = p.volume;
  for (std::int64_t z = 0; z < n; ++z)
    for (std::int64_t y = 0; y < n; ++y)
      for (std::int64_t x = 0; x < n; ++x) {
        const double pz = z + 0.5, py = y + 0.5, px = x + 0.5;
        for (const auto& e : blobs) {
          const double r2 = body_radius2(e, pz, py, px);
          if (r2 <= 1.0) g(z, y, x) = r2 <= 0.3 ? e.inner : e.outer;
        }
        if (spec.lesion) {
          const auto& c = spec.lesion->center;
          const double d2 = (z - c[0]) * (z - c[0]) + (y - c[1]) * (y - c[1]) + (x - c[2]) * (x - c[2]);
          if (d2 <= spec.lesion->radius * spec.lesion->radius) {
            g(z, y, x) = kLesionValue;
            p.mask(z, y, x) = 1.0f;
          }
        }
      }
  p.geometry = g;

  if (spec.domain == PhantomDomain::smooth) {
    p.volume = gaussian_blur(g, 1.0);
  } else {
    // Appearance noise comes from its own stream so geometry is domain-free.
    std::mt19937_64 noise_rng(spec.seed ^ 0x5bd1e995a7c2f3e1ull);
    std::normal_distribution<double> speckle(0.0, kSpeckleStd);
    Volume3 v = g;
    for (float& x : v.voxels()) x = static_cast<float>(x * (1.0 + speckle(noise_rng)));
    const Volume3 soft = gaussian_blur(v, 1.0);
    auto dst = v.voxels();
    const auto lo = soft.voxels();
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] = static_cast<float>(std::clamp(dst[i] + kSharpenAmount * (dst[i] - lo[i]), 0.0, 1.0));
    p.volume = std::move(v);
  }
  for (float& x : p.volume.voxels()) x = std::clamp(x, 0.0f, 1.0f);
  return p;
}

}  // namespace cascade3d
