#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "cascade3d/tensor.hpp"

namespace cascade3d::nn {

enum class PadMode { zero, replicate };

struct ConvOptions {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  PadMode pad_mode = PadMode::zero;
};

// Cross-correlation. input [b, cin, z, y, x], weight [cout, cin, k, k, k],
// bias [cout] or undefined.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, ConvOptions opt = {});

// Adjoint of conv3d with zero padding. input [b, cin, z, y, x],
// weight [cin, cout, k, k, k]; output side = (in - 1) * stride - 2 * padding + k.
template <typename T>
Tensor<T> conv3d_transpose(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::int64_t stride, std::int64_t padding);

// Normalises each (batch, channel) over the spatial axes; gamma/beta [c] may be
// undefined for the plain (non-affine) form.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double alpha);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

// Inverted dropout: kept activations are scaled by 1 / (1 - p). Identity when
// not training.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, std::mt19937_64& rng);

template <typename T>
Tensor<T> nearest_upsample2x(const Tensor<T>& x);
template <typename T>
Tensor<T> avg_downsample2x(const Tensor<T>& x);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
// scale * x + shift, elementwise.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, double scale, double shift);
template <typename T>
Tensor<T> abs(const Tensor<T>& x);
// log(clamp(x, lo, hi)); zero gradient where clamped.
template <typename T>
Tensor<T> log_clamped(const Tensor<T>& x, double lo, double hi);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// While alive, records on this thread which side of its kink every input of
// relu, leaky_relu, abs and log_clamped falls. Two evaluations with equal
// logs lie in the same smooth piece.
class KinkLog {
 public:
  KinkLog();
  ~KinkLog();
  KinkLog(const KinkLog&) = delete;
  KinkLog& operator=(const KinkLog&) = delete;
  const std::vector<std::uint8_t>& signs() const noexcept { return signs_; }

 private:
  std::vector<std::uint8_t> signs_;
  std::vector<std::uint8_t>* previous_;
};

}  // namespace cascade3d::nn
