#include "cascade3d/optim.hpp"

#include <cmath>

#include "cascade3d/errors.hpp"

namespace cascade3d::nn {

template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamMoments& moments, const AdamState& state) {
  if (param.size() != grad.size()) throw ValidationError("adam_step: parameter/gradient size mismatch");
  if (moments.m.size() != param.size()) {
    moments.m.assign(param.size(), 0.0);
    moments.v.assign(param.size(), 0.0);
  }
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    moments.m[i] = o.beta1 * moments.m[i] + (1.0 - o.beta1) * g;
    moments.v[i] = o.beta2 * moments.v[i] + (1.0 - o.beta2) * g * g;
    const double mhat = moments.m[i] / c1;
    const double vhat = moments.v[i] / c2;
    param[i] = static_cast<T>(param[i] - o.lr * mhat / (std::sqrt(vhat) + o.eps));
  }
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamOptions options) : params_(std::move(params)) {
  state_.options = options;
  state_.moments.resize(params_.size());
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void Adam<T>::step() {
  ++state_.step;
  std::vector<T> zeros;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    std::span<const T> g = p.grad();
    if (!p.has_grad()) {
      zeros.assign(static_cast<std::size_t>(p.numel()), T(0));
      g = zeros;
    }
    adam_step<T>(p.mutable_values(), g, state_.moments[k], state_);
  }
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamMoments&, const AdamState&);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamMoments&, const AdamState&);
template class Adam<float>;
template class Adam<double>;

}  // namespace cascade3d::nn
