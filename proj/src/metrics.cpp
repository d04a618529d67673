#include "cascade3d/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "cascade3d/errors.hpp"

namespace cascade3d {

namespace {

void require_same_shape(const Volume3& a, const Volume3& b) {
  if (a.shape() != b.shape())
    throw ValidationError("metric inputs differ in shape: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

// Zero-padded 3D summed-area table, (nz+1)(ny+1)(nx+1) entries.
class Integral {
 public:
  template <typename F>
  Integral(Shape3 s, F value) : ny_(s.ny + 1), nx_(s.nx + 1), t_(static_cast<std::size_t>((s.nz + 1) * ny_ * nx_), 0.0) {
    for (std::int64_t z = 1; z <= s.nz; ++z)
      for (std::int64_t y = 1; y <= s.ny; ++y)
        for (std::int64_t x = 1; x <= s.nx; ++x)
          at(z, y, x) = value(z - 1, y - 1, x - 1) + at(z - 1, y, x) + at(z, y - 1, x) + at(z, y, x - 1) -
                        at(z - 1, y - 1, x) - at(z - 1, y, x - 1) - at(z, y - 1, x - 1) + at(z - 1, y - 1, x - 1);
  }
  // Sum over [z, z+w) x [y, y+w) x [x, x+w).
  double box(std::int64_t z, std::int64_t y, std::int64_t x, std::int64_t w) const {
    const std::int64_t Z = z + w, Y = y + w, X = x + w;
    return get(Z, Y, X) - get(z, Y, X) - get(Z, y, X) - get(Z, Y, x) + get(z, y, X) + get(z, Y, x) + get(Z, y, x) -
           get(z, y, x);
  }

 private:
  double& at(std::int64_t z, std::int64_t y, std::int64_t x) { return t_[static_cast<std::size_t>((z * ny_ + y) * nx_ + x)]; }
  double get(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return t_[static_cast<std::size_t>((z * ny_ + y) * nx_ + x)];
  }
  std::int64_t ny_, nx_;
  std::vector<double> t_;
};

}  // namespace

double ssim3d(const Volume3& a, const Volume3& b, const SsimOptions& opt) {
  require_same_shape(a, b);
  const Shape3 s = a.shape();
  const std::int64_t w = opt.window;
  if (w < 1) throw ValidationError("SSIM window must be positive");
  if (s.nz < w || s.ny < w || s.nx < w)
    throw ValidationError("volume " + to_string(s) + " is smaller than the SSIM window " + std::to_string(w));
  const double c1 = std::pow(opt.k1 * opt.dynamic_range, 2), c2 = std::pow(opt.k2 * opt.dynamic_range, 2);
  const Integral sa(s, [&](auto z, auto y, auto x) { return static_cast<double>(a(z, y, x)); });
  const Integral sb(s, [&](auto z, auto y, auto x) { return static_cast<double>(b(z, y, x)); });
  const Integral saa(s, [&](auto z, auto y, auto x) { return static_cast<double>(a(z, y, x)) * a(z, y, x); });
  const Integral sbb(s, [&](auto z, auto y, auto x) { return static_cast<double>(b(z, y, x)) * b(z, y, x); });
  const Integral sab(s, [&](auto z, auto y, auto x) { return static_cast<double>(a(z, y, x)) * b(z, y, x); });
  const double n = static_cast<double>(w * w * w);
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t z = 0; z + w <= s.nz; ++z)
    for (std::int64_t y = 0; y + w <= s.ny; ++y)
      for (std::int64_t x = 0; x + w <= s.nx; ++x) {
        const double ma = sa.box(z, y, x, w) / n, mb = sb.box(z, y, x, w) / n;
        const double va = saa.box(z, y, x, w) / n - ma * ma;
        const double vb = sbb.box(z, y, x, w) / n - mb * mb;
        const double cov = sab.box(z, y, x, w) / n - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

double mae(const Volume3& a, const Volume3& b) {
  require_same_shape(a, b);
  const auto x = a.voxels(), y = b.voxels();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(static_cast<double>(x[i]) - y[i]);
  return acc / static_cast<double>(x.size());
}

double mse(const Volume3& a, const Volume3& b) {
  require_same_shape(a, b);
  const auto x = a.voxels(), y = b.voxels();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

double psnr(const Volume3& a, const Volume3& b, double dynamic_range) {
  const double e = mse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(dynamic_range * dynamic_range / e);
}

QualityRow quality(const Volume3& result, const Volume3& reference) {
  return {ssim3d(result, reference), mae(result, reference), mse(result, reference), psnr(result, reference)};
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ValidationError("incomplete beta needs positive parameters");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  // The continued fraction converges fast for x < (a + 1) / (a + b + 2).
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incomplete_beta(b, a, 1.0 - x);
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  constexpr double tiny = 1e-300, eps = 1e-16;
  double c = 1.0, d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double f = d;
  for (int m = 1; m <= 1000; ++m) {
    const double m2 = 2.0 * m;
    double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    f *= d * c;
    num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    f *= delta;
    if (std::abs(delta - 1.0) < eps) break;
  }
  return std::exp(log_front) * f / a;
}

double student_t_two_sided(double t, double df) {
  if (!(df > 0.0)) throw ValidationError("degrees of freedom must be positive");
  if (t == 0.0) return 1.0;
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

TTestResult paired_ttest(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ValidationError("paired t-test needs equal sample counts");
  if (xs.size() < 2) throw ValidationError("paired t-test needs at least two pairs");
  const auto n = static_cast<double>(xs.size());
  std::vector<double> d(xs.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    d[i] = xs[i] - ys[i];
    mean += d[i];
  }
  mean /= n;
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  if (ss == 0.0) throw DegenerateError("paired differences have zero variance");
  const double se = std::sqrt(ss / (n - 1.0) / n);
  TTestResult r;
  r.df = static_cast<std::int64_t>(xs.size()) - 1;
  r.t = mean / se;
  r.p = student_t_two_sided(r.t, static_cast<double>(r.df));
  return r;
}

}  // namespace cascade3d
