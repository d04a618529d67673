#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cascade3d/tensor.hpp"

namespace cascade3d::nn {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

struct AdamState {
  AdamOptions options;
  std::int64_t step = 0;
  std::vector<AdamMoments> moments;  // one per parameter, declaration order
};

// One bias-corrected Adam update of `param` in place. `state.step` must
// already count this update.
template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamMoments& moments, const AdamState& state);

template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamOptions options = {});

  void zero_grad();
  // Parameters without an accumulated gradient are treated as zero-gradient.
  void step();

  const AdamState& state() const noexcept { return state_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamState state_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace cascade3d::nn
