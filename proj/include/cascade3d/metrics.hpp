#pragma once

#include <cstdint>
#include <span>

#include "cascade3d/volume.hpp"

namespace cascade3d {

struct SsimOptions {
  std::int64_t window = 7;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Mean SSIM over every fully interior cubic window (uniform weights,
// population variances).
double ssim3d(const Volume3& a, const Volume3& b, const SsimOptions& opt = {});

double mae(const Volume3& a, const Volume3& b);
double mse(const Volume3& a, const Volume3& b);
// 10 log10(L^2 / mse); +infinity when the volumes are identical.
double psnr(const Volume3& a, const Volume3& b, double dynamic_range = 1.0);

struct QualityRow {
  double ssim = 0.0;
  double mae = 0.0;
  double mse = 0.0;
  double psnr = 0.0;
};
QualityRow quality(const Volume3& result, const Volume3& reference);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;  // two-sided
  std::int64_t df = 0;
};

// Paired two-sided t-test on xs - ys. Throws DegenerateError when all
// differences are equal.
TTestResult paired_ttest(std::span<const double> xs, std::span<const double> ys);

// Regularised incomplete beta I_x(a, b) by Lentz's continued fraction.
double incomplete_beta(double a, double b, double x);
// P(|T| > |t|) for Student's t with df degrees of freedom.
double student_t_two_sided(double t, double df);

}  // namespace cascade3d
