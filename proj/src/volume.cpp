#include "cascade3d/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "byte_io.hpp"
#include "cascade3d/errors.hpp"

namespace cascade3d {

namespace {

constexpr char kVolumeMagic[4] = {'V', 'O', 'L', '1'};

using detail::get_u32;
using detail::put_u32;

struct AxisTaps {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> w1;
};

// Half-voxel aligned 1D interpolation taps for an in -> out resize.
AxisTaps axis_taps(std::int64_t in, std::int64_t out) {
  AxisTaps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t j = 0; j < out; ++j) {
    double src = (static_cast<double>(j) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(src));
    const auto hi = std::min(lo + 1, in - 1);
    t.i0[j] = lo;
    t.i1[j] = hi;
    t.w1[j] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

std::string to_string(const Shape3& s) {
  return "(" + std::to_string(s.nz) + "," + std::to_string(s.ny) + "," + std::to_string(s.nx) + ")";
}

std::string to_string(const Box3& b) {
  std::ostringstream os;
  os << "[" << b.lo[0] << "," << b.hi(0) << ")x[" << b.lo[1] << "," << b.hi(1) << ")x[" << b.lo[2] << ","
     << b.hi(2) << ")";
  return os.str();
}

Volume3::Volume3(Shape3 shape, Spacing3 spacing, float fill) : shape_(shape), spacing_(spacing) {
  if (!shape.positive()) throw ValidationError("volume shape must be positive, got " + to_string(shape));
  set_spacing(spacing);
  voxels_.assign(static_cast<std::size_t>(shape.voxels()), fill);
}

Volume3::Volume3(Shape3 shape, Spacing3 spacing, std::span<const float> voxels) : shape_(shape) {
  if (!shape.positive()) throw ValidationError("volume shape must be positive, got " + to_string(shape));
  if (static_cast<std::int64_t>(voxels.size()) != shape.voxels())
    throw ValidationError("voxel count " + std::to_string(voxels.size()) + " does not match shape " +
                          to_string(shape));
  set_spacing(spacing);
  voxels_.assign(voxels.begin(), voxels.end());
}

void Volume3::set_spacing(Spacing3 spacing) {
  if (!(spacing.sz > 0 && spacing.sy > 0 && spacing.sx > 0)) throw ValidationError("spacing must be positive");
  spacing_ = spacing;
}

float Volume3::clamped(std::int64_t z, std::int64_t y, std::int64_t x) const noexcept {
  z = std::clamp<std::int64_t>(z, 0, shape_.nz - 1);
  y = std::clamp<std::int64_t>(y, 0, shape_.ny - 1);
  x = std::clamp<std::int64_t>(x, 0, shape_.nx - 1);
  return voxels_[index(z, y, x)];
}

float Volume3::min() const { return voxels_.empty() ? 0.0f : *std::min_element(voxels_.begin(), voxels_.end()); }
float Volume3::max() const { return voxels_.empty() ? 0.0f : *std::max_element(voxels_.begin(), voxels_.end()); }

std::vector<std::uint8_t> encode_volume(const Volume3& v) {
  nlohmann::ordered_json header;
  header["shape"] = {v.shape().nz, v.shape().ny, v.shape().nx};
  header["spacing"] = {v.spacing().sz, v.spacing().sy, v.spacing().sx};
  header["dtype"] = "f32";
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + 4 * static_cast<std::size_t>(v.size()));
  out.insert(out.end(), std::begin(kVolumeMagic), std::end(kVolumeMagic));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (float f : v.voxels()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

Volume3 decode_volume(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kVolumeMagic, 4) != 0) throw FormatError("bad VOL1 magic", 0);
  if (bytes.size() < 8) throw FormatError("missing VOL1 header length", 4);
  const std::uint32_t header_len = get_u32(bytes, 4);
  if (bytes.size() < 8ull + header_len) throw FormatError("VOL1 header truncated", bytes.size());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("VOL1 header is not valid JSON: ") + e.what(), 8);
  }
  Shape3 shape;
  Spacing3 spacing;
  try {
    if (header.value("dtype", std::string("f32")) != "f32") throw FormatError("unsupported VOL1 dtype", 8);
    const auto& s = header.at("shape");
    if (!s.is_array() || s.size() != 3) throw FormatError("VOL1 shape must have three entries", 8);
    shape = {s[0].get<std::int64_t>(), s[1].get<std::int64_t>(), s[2].get<std::int64_t>()};
    if (header.contains("spacing")) {
      const auto& sp = header.at("spacing");
      if (!sp.is_array() || sp.size() != 3) throw FormatError("VOL1 spacing must have three entries", 8);
      spacing = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("VOL1 header malformed: ") + e.what(), 8);
  }
  if (!shape.positive()) throw FormatError("VOL1 shape must be positive, got " + to_string(shape), 8);
  if (!(spacing.sz > 0 && spacing.sy > 0 && spacing.sx > 0))
    throw FormatError("VOL1 spacing must be positive", 8);

  const std::uint64_t payload_at = 8ull + header_len;
  const std::uint64_t expected = 4ull * static_cast<std::uint64_t>(shape.voxels());
  const std::uint64_t available = bytes.size() - payload_at;
  if (available < expected)
    throw FormatError("VOL1 payload truncated: expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(available),
                      bytes.size());
  if (available > expected) throw FormatError("VOL1 payload has trailing bytes", payload_at + expected);

  Volume3 v(shape, spacing);
  auto dst = v.voxels();
  for (std::int64_t i = 0; i < shape.voxels(); ++i)
    dst[i] = std::bit_cast<float>(get_u32(bytes, payload_at + 4 * static_cast<std::uint64_t>(i)));
  return v;
}

void save_volume(const Volume3& v, const std::filesystem::path& path) {
  detail::write_bytes(path, encode_volume(v));
}

Volume3 load_volume(const std::filesystem::path& path) {
  return decode_volume(detail::read_bytes(path));
}

Volume3 resample_trilinear(const Volume3& v, Shape3 target) {
  if (!target.positive()) throw ValidationError("target shape must be positive, got " + to_string(target));
  const Shape3& in = v.shape();
  const Spacing3 spacing{v.spacing().sz * static_cast<double>(in.nz) / static_cast<double>(target.nz),
                         v.spacing().sy * static_cast<double>(in.ny) / static_cast<double>(target.ny),
                         v.spacing().sx * static_cast<double>(in.nx) / static_cast<double>(target.nx)};
  Volume3 out(target, spacing);
  const AxisTaps tz = axis_taps(in.nz, target.nz);
  const AxisTaps ty = axis_taps(in.ny, target.ny);
  const AxisTaps tx = axis_taps(in.nx, target.nx);
  const auto src = v.voxels();
  auto dst = out.voxels();

#pragma omp parallel for schedule(static)
  for (std::int64_t z = 0; z < target.nz; ++z) {
    const double wz = tz.w1[z];
    for (std::int64_t y = 0; y < target.ny; ++y) {
      const double wy = ty.w1[y];
      const std::int64_t r00 = (tz.i0[z] * in.ny + ty.i0[y]) * in.nx;
      const std::int64_t r01 = (tz.i0[z] * in.ny + ty.i1[y]) * in.nx;
      const std::int64_t r10 = (tz.i1[z] * in.ny + ty.i0[y]) * in.nx;
      const std::int64_t r11 = (tz.i1[z] * in.ny + ty.i1[y]) * in.nx;
      for (std::int64_t x = 0; x < target.nx; ++x) {
        const double wx = tx.w1[x];
        const std::int64_t a = tx.i0[x], b = tx.i1[x];
        const double c00 = src[r00 + a] + wx * (static_cast<double>(src[r00 + b]) - src[r00 + a]);
        const double c01 = src[r01 + a] + wx * (static_cast<double>(src[r01 + b]) - src[r01 + a]);
        const double c10 = src[r10 + a] + wx * (static_cast<double>(src[r10 + b]) - src[r10 + a]);
        const double c11 = src[r11 + a] + wx * (static_cast<double>(src[r11 + b]) - src[r11 + a]);
        const double c0 = c00 + wy * (c01 - c00);
        const double c1 = c10 + wy * (c11 - c10);
        dst[(z * target.ny + y) * target.nx + x] = static_cast<float>(c0 + wz * (c1 - c0));
      }
    }
  }
  return out;
}

double percentile(std::vector<double> values, double fraction) {
  if (values.empty()) throw ValidationError("percentile of an empty sample");
  fraction = std::clamp(fraction, 0.0, 1.0);
  std::sort(values.begin(), values.end());
  const double pos = fraction * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

NormalizeResult normalize_intensity(const Volume3& v, double lo_pct, double hi_pct) {
  if (!(lo_pct >= 0.0 && lo_pct < hi_pct && hi_pct <= 1.0))
    throw ValidationError("normalize_intensity requires 0 <= lo_pct < hi_pct <= 1");
  std::vector<double> values(v.voxels().begin(), v.voxels().end());
  std::sort(values.begin(), values.end());
  auto at = [&](double f) {
    const double pos = f * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  NormalizeResult result;
  result.lo_value = at(lo_pct);
  result.hi_value = at(hi_pct);
  result.volume = Volume3(v.shape(), v.spacing());
  const double span = result.hi_value - result.lo_value;
  if (!(span > 0.0)) {
    result.degenerate = true;
    return result;
  }
  auto dst = result.volume.voxels();
  const auto src = v.voxels();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = static_cast<float>(std::clamp((src[i] - result.lo_value) / span, 0.0, 1.0));
  return result;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::int64_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

namespace {

// One separable pass along `axis` in double precision.
void blur_axis(std::vector<double>& data, const Shape3& s, int axis, const std::vector<double>& k) {
  const auto radius = static_cast<std::int64_t>(k.size() / 2);
  const std::int64_t n = s[axis];
  const std::int64_t stride = axis == 0 ? s.ny * s.nx : (axis == 1 ? s.nx : 1);
  const std::int64_t lines = s.voxels() / n;
  std::vector<double> out(data.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t line = 0; line < lines; ++line) {
    std::int64_t base;
    if (axis == 0) {
      base = line;
    } else if (axis == 1) {
      base = (line / s.nx) * s.ny * s.nx + line % s.nx;
    } else {
      base = line * s.nx;
    }
    for (std::int64_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::int64_t t = -radius; t <= radius; ++t) {
        const std::int64_t j = std::clamp<std::int64_t>(i + t, 0, n - 1);
        acc += k[static_cast<std::size_t>(t + radius)] * data[base + j * stride];
      }
      out[base + i * stride] = acc;
    }
  }
  data.swap(out);
}

}  // namespace

std::vector<double> blur_to_double(const Volume3& v, double sigma) {
  std::vector<double> data(v.voxels().begin(), v.voxels().end());
  if (sigma <= 0.0) return data;
  const auto k = gaussian_kernel(sigma);
  for (int axis = 0; axis < 3; ++axis) blur_axis(data, v.shape(), axis, k);
  return data;
}

Volume3 gaussian_blur(const Volume3& v, double sigma) {
  const auto data = blur_to_double(v, sigma);
  Volume3 out(v.shape(), v.spacing());
  auto dst = out.voxels();
  for (std::size_t i = 0; i < data.size(); ++i) dst[i] = static_cast<float>(data[i]);
  return out;
}

Box3 centered_crop_box(Shape3 outer, Shape3 inner) {
  Box3 b;
  for (int a = 0; a < 3; ++a) {
    if (inner[a] > outer[a]) throw ValidationError("crop box larger than grid");
    b.lo[a] = (outer[a] - inner[a]) / 2;
    b.size[a] = inner[a];
  }
  return b;
}

Volume3 embed_centered(const Volume3& v, Shape3 target) {
  const Box3 where = centered_crop_box(target, v.shape());
  Volume3 out(target, v.spacing());
  for (std::int64_t z = 0; z < target.nz; ++z)
    for (std::int64_t y = 0; y < target.ny; ++y)
      for (std::int64_t x = 0; x < target.nx; ++x)
        out(z, y, x) = v.clamped(z - where.lo[0], y - where.lo[1], x - where.lo[2]);
  return out;
}

}  // namespace cascade3d
