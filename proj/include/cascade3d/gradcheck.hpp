#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cascade3d/tensor.hpp"

namespace cascade3d::nn {

// sum_i w_i * x_i as a 1-element tensor. A random `w` turns any op into a
// scalar probe whose gradient is w pulled back through the op.
Tensor<double> weighted_sum(const Tensor<double>& x, std::span<const double> w);

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::int64_t entries = 0;
  std::int64_t kink_retries = 0;  // coordinates re-probed with a smaller step
  bool passed(double tol = 1e-4) const noexcept { return max_rel_error < tol; }
};

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Central differences on up to `max_entries` randomly chosen coordinates of
// each input (all of them when the input is smaller). Error per coordinate is
// |analytic - numeric| / max(|analytic|, |numeric|, floor, 1e-4 * largest
// analytic entry of that input). Steps crossing a kink are shrunk by 10x
// (at most 3 times).
GradCheckResult check_gradients(const std::string& name, const ScalarFn& f, std::vector<Tensor<double>> inputs,
                                std::mt19937_64& rng, double h = 1e-5, std::int64_t max_entries = 64,
                                double floor = 1e-6);

// Every differentiable op on randomised small shapes, and optionally the
// three network families at reduced width.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, bool include_networks = true);

}  // namespace cascade3d::nn
