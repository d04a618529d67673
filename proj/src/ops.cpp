#include "cascade3d/ops.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include <Eigen/Core>

#include "cascade3d/errors.hpp"

namespace cascade3d::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
// Untracked column buffers.
template <typename T>
using Scratch = std::vector<T, Eigen::aligned_allocator<T>>;

// Sliding-window geometry between an "image" grid and a grid of window
// positions. Used in both directions by conv3d and conv3d_transpose.
struct Window {
  std::int64_t channels;
  std::int64_t iz, iy, ix;  // image
  std::int64_t oz, oy, ox;  // positions
  std::int64_t k, stride, pad;
  PadMode mode;

  std::int64_t rows() const { return channels * k * k * k; }
  std::int64_t positions() const { return oz * oy * ox; }
  std::int64_t image_size() const { return channels * iz * iy * ix; }
};

std::int64_t conv_out(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Maps a padded coordinate to a source index or -1 (zero padding).
inline std::int64_t source_index(std::int64_t c, std::int64_t n, PadMode mode) {
  if (c >= 0 && c < n) return c;
  if (mode == PadMode::zero) return -1;
  return c < 0 ? 0 : n - 1;
}

// Range [lo, hi) of positions along one axis whose tap lands inside the image.
struct Span {
  std::int64_t lo, hi;
};

inline Span inside(std::int64_t positions, std::int64_t n, std::int64_t stride, std::int64_t offset) {
  // tap = p * stride + offset
  std::int64_t lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  std::int64_t hi = n - offset <= 0 ? 0 : (n - offset + stride - 1) / stride;
  lo = std::min(lo, positions);
  hi = std::clamp(hi, lo, positions);
  return {lo, hi};
}

// Columns for position slices [z0, z1); `cols` holds rows x (z1 - z0) * oy * ox.
template <typename T>
void im2col(const T* image, const Window& w, std::int64_t z0, std::int64_t z1, T* cols) {
  const std::int64_t n = (z1 - z0) * w.oy * w.ox;
  const std::int64_t kk = w.k;
  const bool zero = w.mode == PadMode::zero;
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < w.rows(); ++r) {
    const std::int64_t kx = r % kk, ky = (r / kk) % kk, kz = (r / (kk * kk)) % kk, c = r / (kk * kk * kk);
    const T* plane = image + c * w.iz * w.iy * w.ix;
    T* out = cols + r * n;
    const std::int64_t off = kx - w.pad;
    const Span xs = inside(w.ox, w.ix, w.stride, off);
    for (std::int64_t pz = z0; pz < z1; ++pz) {
      const std::int64_t sz = source_index(pz * w.stride - w.pad + kz, w.iz, w.mode);
      for (std::int64_t py = 0; py < w.oy; ++py) {
        const std::int64_t sy = source_index(py * w.stride - w.pad + ky, w.iy, w.mode);
        T* dst = out + ((pz - z0) * w.oy + py) * w.ox;
        if (sz < 0 || sy < 0) {
          std::fill(dst, dst + w.ox, T(0));
          continue;
        }
        const T* row = plane + (sz * w.iy + sy) * w.ix;
        const T left = zero ? T(0) : row[0], right = zero ? T(0) : row[w.ix - 1];
        std::fill(dst, dst + xs.lo, left);
        if (w.stride == 1) {
          std::copy(row + xs.lo + off, row + xs.hi + off, dst + xs.lo);
        } else {
          for (std::int64_t px = xs.lo; px < xs.hi; ++px) dst[px] = row[px * w.stride + off];
        }
        std::fill(dst + xs.hi, dst + w.ox, right);
      }
    }
  }
}

// Adjoint of im2col: accumulates column entries back onto the image.
template <typename T>
void col2im(const T* cols, const Window& w, std::int64_t z0, std::int64_t z1, T* image) {
  const std::int64_t n = (z1 - z0) * w.oy * w.ox;
  const std::int64_t kk = w.k;
  const std::int64_t k3 = kk * kk * kk;
  const bool zero = w.mode == PadMode::zero;
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < w.channels; ++c) {
    T* plane = image + c * w.iz * w.iy * w.ix;
    for (std::int64_t kr = 0; kr < k3; ++kr) {
      const std::int64_t kx = kr % kk, ky = (kr / kk) % kk, kz = kr / (kk * kk);
      const T* in = cols + (c * k3 + kr) * n;
      const std::int64_t off = kx - w.pad;
      const Span xs = inside(w.ox, w.ix, w.stride, off);
      for (std::int64_t pz = z0; pz < z1; ++pz) {
        const std::int64_t sz = source_index(pz * w.stride - w.pad + kz, w.iz, w.mode);
        if (sz < 0) continue;
        for (std::int64_t py = 0; py < w.oy; ++py) {
          const std::int64_t sy = source_index(py * w.stride - w.pad + ky, w.iy, w.mode);
          if (sy < 0) continue;
          T* row = plane + (sz * w.iy + sy) * w.ix;
          const T* src = in + ((pz - z0) * w.oy + py) * w.ox;
          if (!zero) {
            for (std::int64_t px = 0; px < xs.lo; ++px) row[0] += src[px];
            for (std::int64_t px = xs.hi; px < w.ox; ++px) row[w.ix - 1] += src[px];
          }
          T* base = row + off;
          if (w.stride == 1) {
            for (std::int64_t px = xs.lo; px < xs.hi; ++px) base[px] += src[px];
          } else {
            for (std::int64_t px = xs.lo; px < xs.hi; ++px) base[px * w.stride] += src[px];
          }
        }
      }
    }
  }
}

// Position slices per chunk so one column block stays near kChunkBytes.
template <typename T>
std::int64_t slab_depth(const Window& w) {
  constexpr std::int64_t kChunkBytes = 1 << 20;
  const std::int64_t per_slice = w.rows() * w.oy * w.ox * static_cast<std::int64_t>(sizeof(T));
  return std::clamp<std::int64_t>(kChunkBytes / std::max<std::int64_t>(per_slice, 1), 1, w.oz);
}

void require_rank5(const Shape& s, const char* op) {
  if (s.size() != 5) throw ValidationError(std::string(op) + ": expected a 5-axis tensor, got " + to_string(s));
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ValidationError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

// Elementwise unary op with derivative expressed through input and output.
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F f, D df) {
  auto out = make_result<T>(x.shape(), {x}, [df](Node<T>& self) {
    Node<T>& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    const std::size_t n = self.value.size();
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * df(in.value[i], self.value[i]);
  });
  auto dst = out.mutable_values();
  const auto src = x.values();
  const std::size_t n = src.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) dst[i] = f(src[i]);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, ConvOptions opt) {
  require_rank5(input.shape(), "conv3d input");
  require_rank5(weight.shape(), "conv3d weight");
  const std::int64_t b = input.dim(0), cin = input.dim(1);
  const std::int64_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin)
    throw ValidationError("conv3d: weight expects " + std::to_string(weight.dim(1)) + " input channels, got " +
                          std::to_string(cin));
  if (weight.dim(3) != k || weight.dim(4) != k) throw ValidationError("conv3d: kernel must be cubic");
  if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != cout))
    throw ValidationError("conv3d: bias must have shape [" + std::to_string(cout) + "]");
  if (opt.stride < 1 || opt.padding < 0) throw ValidationError("conv3d: invalid stride/padding");
  for (int a = 2; a < 5; ++a)
    if (input.dim(a) + 2 * opt.padding < k)
      throw ValidationError("conv3d: spatial size " + to_string(input.shape()) + " too small for kernel " +
                            std::to_string(k));

  Window w{cin,
           input.dim(2),
           input.dim(3),
           input.dim(4),
           conv_out(input.dim(2), k, opt.stride, opt.padding),
           conv_out(input.dim(3), k, opt.stride, opt.padding),
           conv_out(input.dim(4), k, opt.stride, opt.padding),
           k,
           opt.stride,
           opt.padding,
           opt.pad_mode};
  const std::int64_t n = w.positions(), rows = w.rows();

  std::vector<Tensor<T>> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  auto out = make_result<T>({b, cout, w.oz, w.oy, w.ox}, parents, [w, b, cout, has_bias = bias.defined()](Node<T>& self) {
    Node<T>& in = *self.parents[0];
    Node<T>& wt = *self.parents[1];
    const std::int64_t n = w.positions(), rows = w.rows();
    const std::int64_t slab = slab_depth<T>(w), plane = w.oy * w.ox;
    Scratch<T> cols(static_cast<std::size_t>(rows * slab * plane));
    for (std::int64_t bi = 0; bi < b; ++bi) {
      const T* gout_b = self.grad.data() + bi * cout * n;
      if (has_bias && self.parents[2]->requires_grad) {
        auto& gb = self.parents[2]->ensure_grad();
        ConstMatMap<T> gout(gout_b, cout, n);
        for (std::int64_t c = 0; c < cout; ++c) gb[c] += gout.row(c).sum();
      }
      for (std::int64_t z0 = 0; z0 < w.oz; z0 += slab) {
        const std::int64_t z1 = std::min(z0 + slab, w.oz), m = (z1 - z0) * plane;
        Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>> gout(gout_b + z0 * plane, cout, m,
                                                                  Eigen::OuterStride<>(n));
        if (wt.requires_grad) {
          im2col(in.value.data() + bi * w.image_size(), w, z0, z1, cols.data());
          MatMap<T> gw(wt.ensure_grad().data(), cout, rows);
          gw.noalias() += gout * ConstMatMap<T>(cols.data(), rows, m).transpose();
        }
        if (in.requires_grad) {
          MatMap<T> gcols(cols.data(), rows, m);
          gcols.noalias() = ConstMatMap<T>(wt.value.data(), cout, rows).transpose() * gout;
          col2im(cols.data(), w, z0, z1, in.ensure_grad().data() + bi * w.image_size());
        }
      }
    }
  });

  const std::int64_t slab = slab_depth<T>(w), plane = w.oy * w.ox;
  Scratch<T> cols(static_cast<std::size_t>(rows * slab * plane));
  ConstMatMap<T> wmat(weight.values().data(), cout, rows);
  for (std::int64_t bi = 0; bi < b; ++bi) {
    T* ob = out.mutable_values().data() + bi * cout * n;
    for (std::int64_t z0 = 0; z0 < w.oz; z0 += slab) {
      const std::int64_t z1 = std::min(z0 + slab, w.oz), m = (z1 - z0) * plane;
      im2col(input.values().data() + bi * w.image_size(), w, z0, z1, cols.data());
      Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>> o(ob + z0 * plane, cout, m, Eigen::OuterStride<>(n));
      o.noalias() = wmat * ConstMatMap<T>(cols.data(), rows, m);
    }
    if (bias.defined())
      for (std::int64_t c = 0; c < cout; ++c) {
        T* oc = ob + c * n;
        const T bv = bias.values()[c];
        for (std::int64_t i = 0; i < n; ++i) oc[i] += bv;
      }
  }
  return out;
}

template <typename T>
Tensor<T> conv3d_transpose(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::int64_t stride, std::int64_t padding) {
  require_rank5(input.shape(), "conv3d_transpose input");
  require_rank5(weight.shape(), "conv3d_transpose weight");
  const std::int64_t b = input.dim(0), cin = input.dim(1);
  if (weight.dim(0) != cin)
    throw ValidationError("conv3d_transpose: weight expects " + std::to_string(weight.dim(0)) +
                          " input channels, got " + std::to_string(cin));
  const std::int64_t cout = weight.dim(1), k = weight.dim(2);
  if (weight.dim(3) != k || weight.dim(4) != k) throw ValidationError("conv3d_transpose: kernel must be cubic");
  if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != cout))
    throw ValidationError("conv3d_transpose: bias must have shape [" + std::to_string(cout) + "]");
  if (stride < 1 || padding < 0) throw ValidationError("conv3d_transpose: invalid stride/padding");

  const auto out_side = [&](std::int64_t in) { return (in - 1) * stride - 2 * padding + k; };
  // Window over the output image whose positions are the input voxels.
  Window w{cout,
           out_side(input.dim(2)),
           out_side(input.dim(3)),
           out_side(input.dim(4)),
           input.dim(2),
           input.dim(3),
           input.dim(4),
           k,
           stride,
           padding,
           PadMode::zero};
  if (w.iz <= 0 || w.iy <= 0 || w.ix <= 0) throw ValidationError("conv3d_transpose: empty output");
  const std::int64_t nin = w.positions(), rows = w.rows();

  std::vector<Tensor<T>> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  auto out = make_result<T>({b, cout, w.iz, w.iy, w.ix}, parents, [w, b, cin, has_bias = bias.defined()](Node<T>& self) {
    Node<T>& in = *self.parents[0];
    Node<T>& wt = *self.parents[1];
    const std::int64_t nin = w.positions(), rows = w.rows();
    const std::int64_t out_n = w.iz * w.iy * w.ix;
    const std::int64_t slab = slab_depth<T>(w), plane = w.oy * w.ox;
    Scratch<T> cols(static_cast<std::size_t>(rows * slab * plane));
    for (std::int64_t bi = 0; bi < b; ++bi) {
      const T* gout = self.grad.data() + bi * w.image_size();
      if (has_bias && self.parents[2]->requires_grad) {
        auto& gb = self.parents[2]->ensure_grad();
        for (std::int64_t c = 0; c < w.channels; ++c) {
          T acc = 0;
          for (std::int64_t i = 0; i < out_n; ++i) acc += gout[c * out_n + i];
          gb[c] += acc;
        }
      }
      if (!in.requires_grad && !wt.requires_grad) continue;
      for (std::int64_t z0 = 0; z0 < w.oz; z0 += slab) {
        const std::int64_t z1 = std::min(z0 + slab, w.oz), m = (z1 - z0) * plane;
        im2col(gout, w, z0, z1, cols.data());
        ConstMatMap<T> gcols(cols.data(), rows, m);
        if (in.requires_grad) {
          Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>> gin(in.ensure_grad().data() + bi * cin * nin + z0 * plane,
                                                             cin, m, Eigen::OuterStride<>(nin));
          gin.noalias() += ConstMatMap<T>(wt.value.data(), cin, rows) * gcols;
        }
        if (wt.requires_grad) {
          Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>> x(in.value.data() + bi * cin * nin + z0 * plane, cin,
                                                                 m, Eigen::OuterStride<>(nin));
          MatMap<T> gw(wt.ensure_grad().data(), cin, rows);
          gw.noalias() += x * gcols.transpose();
        }
      }
    }
  });

  const std::int64_t slab = slab_depth<T>(w), plane = w.oy * w.ox;
  Scratch<T> cols(static_cast<std::size_t>(rows * slab * plane));
  ConstMatMap<T> wmat(weight.values().data(), cin, rows);
  const std::int64_t out_n = w.iz * w.iy * w.ix;
  for (std::int64_t bi = 0; bi < b; ++bi) {
    T* o = out.mutable_values().data() + bi * w.image_size();
    for (std::int64_t z0 = 0; z0 < w.oz; z0 += slab) {
      const std::int64_t z1 = std::min(z0 + slab, w.oz), m = (z1 - z0) * plane;
      Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>> x(input.values().data() + bi * cin * nin + z0 * plane, cin,
                                                             m, Eigen::OuterStride<>(nin));
      MatMap<T> c(cols.data(), rows, m);
      c.noalias() = wmat.transpose() * x;
      col2im(cols.data(), w, z0, z1, o);
    }
    if (bias.defined())
      for (std::int64_t ch = 0; ch < cout; ++ch)
        for (std::int64_t i = 0; i < out_n; ++i) o[ch * out_n + i] += bias.values()[ch];
  }
  return out;
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  require_rank5(input.shape(), "instance_norm");
  const std::int64_t b = input.dim(0), c = input.dim(1);
  const std::int64_t n = input.dim(2) * input.dim(3) * input.dim(4);
  if (gamma.defined() != beta.defined()) throw ValidationError("instance_norm: gamma and beta go together");
  if (gamma.defined() && (gamma.numel() != c || beta.numel() != c))
    throw ValidationError("instance_norm: affine parameters must have " + std::to_string(c) + " entries");

  // Per-(b, c) mean and inverse std, kept for the backward pass.
  auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(2 * b * c));
  std::vector<Tensor<T>> parents{input};
  const bool affine = gamma.defined();
  if (affine) {
    parents.push_back(gamma);
    parents.push_back(beta);
  }
  auto out = make_result<T>(input.shape(), parents, [stats, b, c, n, affine](Node<T>& self) {
    Node<T>& in = *self.parents[0];
    Node<T>* g = affine ? self.parents[1].get() : nullptr;
    Node<T>* be = affine ? self.parents[2].get() : nullptr;
    for (std::int64_t bc = 0; bc < b * c; ++bc) {
      const std::int64_t ch = bc % c;
      const double mu = (*stats)[2 * bc], inv = (*stats)[2 * bc + 1];
      const T* x = in.value.data() + bc * n;
      const T* dy = self.grad.data() + bc * n;
      const double scale = affine ? static_cast<double>(g->value[ch]) : 1.0;
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double xhat = (x[i] - mu) * inv;
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * xhat;
      }
      if (affine && g->requires_grad) g->ensure_grad()[ch] += static_cast<T>(sum_dy_xhat);
      if (affine && be->requires_grad) be->ensure_grad()[ch] += static_cast<T>(sum_dy);
      if (in.requires_grad) {
        T* dx = in.ensure_grad().data() + bc * n;
        const double nn = static_cast<double>(n);
        for (std::int64_t i = 0; i < n; ++i) {
          const double xhat = (x[i] - mu) * inv;
          dx[i] += static_cast<T>(scale * inv / nn * (nn * dy[i] - sum_dy - xhat * sum_dy_xhat));
        }
      }
    }
  });

  const auto x = input.values();
  auto y = out.mutable_values();
#pragma omp parallel for schedule(static)
  for (std::int64_t bc = 0; bc < b * c; ++bc) {
    const std::int64_t ch = bc % c;
    double mu = 0.0;
    for (std::int64_t i = 0; i < n; ++i) mu += x[bc * n + i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = x[bc * n + i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * bc] = mu;
    (*stats)[2 * bc + 1] = inv;
    const double scale = affine ? static_cast<double>(gamma.values()[ch]) : 1.0;
    const double shift = affine ? static_cast<double>(beta.values()[ch]) : 0.0;
    for (std::int64_t i = 0; i < n; ++i) y[bc * n + i] = static_cast<T>(scale * (x[bc * n + i] - mu) * inv + shift);
  }
  return out;
}

namespace {

thread_local std::vector<std::uint8_t>* g_kink_log = nullptr;

// Appends which side of the kink at `at` each input lies on.
template <typename T>
void log_kinks(const Tensor<T>& x, T at) {
  if (!g_kink_log) return;
  for (T v : x.values()) g_kink_log->push_back(v > at ? 1 : (v < at ? 2 : 0));
}

}  // namespace

KinkLog::KinkLog() : previous_(g_kink_log) { g_kink_log = &signs_; }
KinkLog::~KinkLog() { g_kink_log = previous_; }

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double alpha) {
  const T a = static_cast<T>(alpha);
  log_kinks(x, T(0));
  return unary(x, [a](T v) { return v > T(0) ? v : a * v; }, [a](T v, T) { return v > T(0) ? T(1) : a; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  log_kinks(x, T(0));
  return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ValidationError("dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
  for (auto& m : *mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < p ? T(0) : keep_scale;
  }
  auto out = make_result<T>(x.shape(), {x}, [mask](Node<T>& self) {
    Node<T>& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
  auto y = out.mutable_values();
  const auto v = x.values();
  for (std::size_t i = 0; i < v.size(); ++i) y[i] = v[i] * (*mask)[i];
  return out;
}

template <typename T>
Tensor<T> nearest_upsample2x(const Tensor<T>& x) {
  require_rank5(x.shape(), "nearest_upsample2x");
  const std::int64_t bc = x.dim(0) * x.dim(1), z = x.dim(2), y = x.dim(3), w = x.dim(4);
  auto index = [=](std::int64_t p, std::int64_t oz, std::int64_t oy, std::int64_t ox) {
    return ((p * z + oz / 2) * y + oy / 2) * w + ox / 2;
  };
  auto out = make_result<T>({x.dim(0), x.dim(1), 2 * z, 2 * y, 2 * w}, {x}, [=](Node<T>& self) {
    Node<T>& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    std::int64_t i = 0;
    for (std::int64_t p = 0; p < bc; ++p)
      for (std::int64_t oz = 0; oz < 2 * z; ++oz)
        for (std::int64_t oy = 0; oy < 2 * y; ++oy)
          for (std::int64_t ox = 0; ox < 2 * w; ++ox) g[index(p, oz, oy, ox)] += self.grad[i++];
  });
  auto dst = out.mutable_values();
  const auto src = x.values();
  std::int64_t i = 0;
  for (std::int64_t p = 0; p < bc; ++p)
    for (std::int64_t oz = 0; oz < 2 * z; ++oz)
      for (std::int64_t oy = 0; oy < 2 * y; ++oy)
        for (std::int64_t ox = 0; ox < 2 * w; ++ox) dst[i++] = src[index(p, oz, oy, ox)];
  return out;
}

template <typename T>
Tensor<T> avg_downsample2x(const Tensor<T>& x) {
  require_rank5(x.shape(), "avg_downsample2x");
  const std::int64_t bc = x.dim(0) * x.dim(1), z = x.dim(2), y = x.dim(3), w = x.dim(4);
  if (z % 2 || y % 2 || w % 2) throw ValidationError("avg_downsample2x needs even spatial sides, got " + to_string(x.shape()));
  const std::int64_t hz = z / 2, hy = y / 2, hw = w / 2;
  auto index = [=](std::int64_t p, std::int64_t iz, std::int64_t iy, std::int64_t ix) {
    return ((p * z + iz) * y + iy) * w + ix;
  };
  auto out = make_result<T>({x.dim(0), x.dim(1), hz, hy, hw}, {x}, [=](Node<T>& self) {
    Node<T>& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    std::int64_t i = 0;
    for (std::int64_t p = 0; p < bc; ++p)
      for (std::int64_t oz = 0; oz < hz; ++oz)
        for (std::int64_t oy = 0; oy < hy; ++oy)
          for (std::int64_t ox = 0; ox < hw; ++ox, ++i) {
            const T share = self.grad[i] / T(8);
            for (int d = 0; d < 8; ++d) g[index(p, 2 * oz + (d >> 2), 2 * oy + ((d >> 1) & 1), 2 * ox + (d & 1))] += share;
          }
  });
  auto dst = out.mutable_values();
  const auto src = x.values();
  std::int64_t i = 0;
  for (std::int64_t p = 0; p < bc; ++p)
    for (std::int64_t oz = 0; oz < hz; ++oz)
      for (std::int64_t oy = 0; oy < hy; ++oy)
        for (std::int64_t ox = 0; ox < hw; ++ox) {
          T acc = 0;
          for (int d = 0; d < 8; ++d) acc += src[index(p, 2 * oz + (d >> 2), 2 * oy + ((d >> 1) & 1), 2 * ox + (d & 1))];
          dst[i++] = acc / T(8);
        }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ValidationError("concat_channels: nothing to concatenate");
  Shape shape = parts.front().shape();
  require_rank5(shape, "concat_channels");
  std::vector<std::int64_t> channels;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    require_rank5(s, "concat_channels");
    if (s[0] != shape[0] || s[2] != shape[2] || s[3] != shape[3] || s[4] != shape[4])
      throw ValidationError("concat_channels: incompatible shapes " + to_string(shape) + " and " + to_string(s));
    channels.push_back(s[1]);
    total += s[1];
  }
  const std::int64_t b = shape[0];
  const std::int64_t spatial = shape[2] * shape[3] * shape[4];
  shape[1] = total;
  auto out = make_result<T>(shape, parts, [=](Node<T>& self) {
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node<T>& in = *self.parents[k];
      const std::int64_t c = channels[k];
      if (in.requires_grad) {
        auto& g = in.ensure_grad();
        for (std::int64_t bi = 0; bi < b; ++bi)
          for (std::int64_t i = 0; i < c * spatial; ++i)
            g[bi * c * spatial + i] += self.grad[(bi * total + offset) * spatial + i];
      }
      offset += c;
    }
  });
  auto dst = out.mutable_values();
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].values();
    const std::int64_t c = channels[k];
    for (std::int64_t bi = 0; bi < b; ++bi)
      std::copy(src.begin() + bi * c * spatial, src.begin() + (bi + 1) * c * spatial,
                dst.begin() + (bi * total + offset) * spatial);
    offset += c;
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  auto out = make_result<T>(a.shape(), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      Node<T>& in = *self.parents[k];
      if (!in.requires_grad) continue;
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
  auto y = out.mutable_values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] + b.values()[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  auto out = make_result<T>(a.shape(), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      Node<T>& in = *self.parents[k];
      if (!in.requires_grad) continue;
      auto& g = in.ensure_grad();
      const T sign = k == 0 ? T(1) : T(-1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
  auto y = out.mutable_values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] - b.values()[i];
  return out;
}

template <typename T>
Tensor<T> affine(const Tensor<T>& x, double scale, double shift) {
  const T s = static_cast<T>(scale), t = static_cast<T>(shift);
  return unary(x, [s, t](T v) { return s * v + t; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  log_kinks(x, T(0));
  return unary(
      x, [](T v) { return std::abs(v); }, [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> log_clamped(const Tensor<T>& x, double lo, double hi) {
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  log_kinks(x, l);
  log_kinks(x, h);
  return unary(
      x, [l, h](T v) { return std::log(std::clamp(v, l, h)); },
      [l, h](T v, T) { return (v < l || v > h) ? T(0) : T(1) / v; });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const auto n = static_cast<T>(x.numel());
  auto out = make_result<T>({1}, {x}, [n](Node<T>& self) {
    Node<T>& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    const T share = self.grad[0] / n;
    for (auto& v : g) v += share;
  });
  double acc = 0.0;
  for (T v : x.values()) acc += v;
  out.mutable_values()[0] = static_cast<T>(acc / static_cast<double>(n));
  return out;
}

#define CASCADE3D_INSTANTIATE_OPS(T)                                                                           \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvOptions);                 \
  template Tensor<T> conv3d_transpose(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::int64_t,       \
                                      std::int64_t);                                                            \
  template Tensor<T> instance_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);               \
  template Tensor<T> leaky_relu(const Tensor<T>&, double);                                                      \
  template Tensor<T> relu(const Tensor<T>&);                                                                    \
  template Tensor<T> tanh(const Tensor<T>&);                                                                    \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                 \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, std::mt19937_64&);                                 \
  template Tensor<T> nearest_upsample2x(const Tensor<T>&);                                                      \
  template Tensor<T> avg_downsample2x(const Tensor<T>&);                                                        \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> affine(const Tensor<T>&, double, double);                                                  \
  template Tensor<T> abs(const Tensor<T>&);                                                                     \
  template Tensor<T> log_clamped(const Tensor<T>&, double, double);                                             \
  template Tensor<T> mean(const Tensor<T>&);

CASCADE3D_INSTANTIATE_OPS(float)
CASCADE3D_INSTANTIATE_OPS(double)

}  // namespace cascade3d::nn
