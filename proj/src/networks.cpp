#include "cascade3d/networks.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "byte_io.hpp"
#include "cascade3d/errors.hpp"

namespace cascade3d::nn {

namespace {

constexpr char kCheckpointMagic[5] = {'C', 'K', 'P', 'T', '1'};
constexpr double kLeakySlope = 0.2;

std::int64_t conv_side(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

std::int64_t channels_at(const NetConfig& cfg, int level) { return static_cast<std::int64_t>(cfg.base_channels) << level; }

bool dropout_block(const NetConfig& cfg, int level) { return level >= cfg.depth - 3 && cfg.dropout > 0.0; }

class Walk {
 public:
  explicit Walk(std::vector<LayerSummary>& out) : out_(out) {}
  void add(std::string name, std::string kind, std::int64_t c, std::int64_t s, std::int64_t params = 0) {
    out_.push_back({std::move(name), std::move(kind), Shape{1, c, s, s, s}, params});
  }

 private:
  std::vector<LayerSummary>& out_;
};

std::int64_t conv_params(std::int64_t cin, std::int64_t cout, std::int64_t k) { return cin * cout * k * k * k + cout; }

}  // namespace

std::string to_string(NetFamily f) {
  switch (f) {
    case NetFamily::lr_unet: return "lr_unet";
    case NetFamily::hr_resnet: return "hr_resnet";
    case NetFamily::discriminator: return "discriminator";
  }
  return "unknown";
}

NetFamily parse_net_family(const std::string& name) {
  if (name == "lr_unet") return NetFamily::lr_unet;
  if (name == "hr_resnet") return NetFamily::hr_resnet;
  if (name == "discriminator") return NetFamily::discriminator;
  throw ValidationError("unknown network family '" + name + "'");
}

NetConfig NetConfig::lr_unet(std::uint64_t seed) {
  NetConfig c;
  c.family = NetFamily::lr_unet;
  c.in_channels = 1;
  c.base_channels = 16;
  c.depth = 4;
  c.scale = 0;
  c.seed = seed;
  return c;
}

NetConfig NetConfig::hr_resnet(int scale, std::uint64_t seed) {
  NetConfig c;
  c.family = NetFamily::hr_resnet;
  c.in_channels = 2;
  c.base_channels = 32;
  c.n_res_blocks = 6;
  c.dropout = 0.0;
  c.scale = scale;
  c.seed = seed;
  return c;
}

NetConfig NetConfig::discriminator(int scale, std::uint64_t seed) {
  NetConfig c;
  c.family = NetFamily::discriminator;
  c.in_channels = scale == 0 ? 2 : 3;
  c.base_channels = 16;
  c.depth = 4;
  c.dropout = 0.0;
  c.scale = scale;
  c.seed = seed;
  return c;
}

void NetConfig::validate() const {
  if (in_channels < 1 || base_channels < 1) throw ValidationError("network channel counts must be positive");
  if (scale < 0) throw ValidationError("scale index must be non-negative");
  if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("dropout must be in [0, 1)");
  switch (family) {
    case NetFamily::lr_unet:
      if (depth < 2) throw ValidationError("lr_unet needs at least 2 levels");
      if (in_channels != 1) throw ValidationError("lr_unet takes the sketch only (1 channel)");
      break;
    case NetFamily::hr_resnet:
      if (n_res_blocks < 0) throw ValidationError("n_res_blocks must be non-negative");
      if (in_channels != 2) throw ValidationError("hr_resnet takes (sketch, previous scale): 2 channels, got " +
                                                  std::to_string(in_channels));
      break;
    case NetFamily::discriminator:
      if (depth < 1) throw ValidationError("discriminator needs at least 1 block");
      if (in_channels != (scale == 0 ? 2 : 3))
        throw ValidationError("discriminator at scale " + std::to_string(scale) + " takes " +
                              std::to_string(scale == 0 ? 2 : 3) + " channels, got " + std::to_string(in_channels));
      break;
  }
}

nlohmann::ordered_json to_json(const NetConfig& cfg) {
  nlohmann::ordered_json j;
  j["family"] = to_string(cfg.family);
  j["in_channels"] = cfg.in_channels;
  j["base_channels"] = cfg.base_channels;
  j["depth"] = cfg.depth;
  j["n_res_blocks"] = cfg.n_res_blocks;
  j["dropout"] = cfg.dropout;
  j["scale"] = cfg.scale;
  j["seed"] = cfg.seed;
  return j;
}

NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig c;
  c.family = parse_net_family(j.at("family").get<std::string>());
  c.in_channels = j.at("in_channels").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.depth = j.at("depth").get<int>();
  c.n_res_blocks = j.at("n_res_blocks").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.scale = j.at("scale").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

std::int64_t output_side(const NetConfig& cfg, std::int64_t input_side) {
  cfg.validate();
  switch (cfg.family) {
    case NetFamily::lr_unet: {
      const std::int64_t div = std::int64_t{1} << cfg.depth;
      if (input_side % div != 0)
        throw ValidationError("lr_unet input side " + std::to_string(input_side) + " must be a multiple of " +
                              std::to_string(div));
      return input_side / 2;
    }
    case NetFamily::hr_resnet:
      if (input_side < 1) throw ValidationError("hr_resnet input side must be positive");
      return input_side;
    case NetFamily::discriminator: {
      std::int64_t s = input_side;
      for (int b = 0; b < cfg.depth; ++b) {
        if (s < 2) throw ValidationError("discriminator input side " + std::to_string(input_side) + " too small");
        s = conv_side(s, 4, 2, 1);
      }
      return s;
    }
  }
  return 0;
}

std::int64_t valid_margin(const NetConfig& cfg) {
  if (cfg.family != NetFamily::hr_resnet) return 0;
  // Stem plus two convolutions per block, each 3^3 with padding 1.
  const std::int64_t stacked = 1 + 2 * static_cast<std::int64_t>(cfg.n_res_blocks);
  return static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(stacked))));
}

std::vector<LayerSummary> summarize(const NetConfig& cfg, std::int64_t input_side) {
  const std::int64_t out_side = output_side(cfg, input_side);
  std::vector<LayerSummary> out;
  Walk w(out);
  switch (cfg.family) {
    case NetFamily::lr_unet: {
      std::int64_t s = input_side, cin = cfg.in_channels;
      std::vector<std::pair<std::int64_t, std::int64_t>> skips;
      for (int l = 0; l < cfg.depth; ++l) {
        const std::int64_t c = channels_at(cfg, l);
        s = conv_side(s, 3, 2, 1);
        const std::string p = "enc" + std::to_string(l);
        w.add(p + ".conv", "conv3d", c, s, conv_params(cin, c, 3));
        if (l > 0) w.add(p + ".norm", "instance_norm", c, s, 2 * c);
        w.add(p + ".act", "leaky_relu", c, s);
        skips.emplace_back(c, s);
        cin = c;
      }
      for (int l = cfg.depth - 2; l >= 0; --l) {
        const std::int64_t c = channels_at(cfg, l);
        s *= 2;
        const std::string p = "dec" + std::to_string(l);
        w.add(p + ".upconv", "conv3d_transpose", c, s, conv_params(cin, c, 2));
        w.add(p + ".norm", "instance_norm", c, s, 2 * c);
        w.add(p + ".act", "relu", c, s);
        if (dropout_block(cfg, l)) w.add(p + ".dropout", "dropout", c, s);
        w.add(p + ".concat", "concat", c + skips[l].first, s);
        cin = c + skips[l].first;
      }
      w.add("head.conv", "conv3d", 1, s, conv_params(cin, 1, 3));
      w.add("head.act", "sigmoid", 1, s);
      break;
    }
    case NetFamily::hr_resnet: {
      const std::int64_t c = cfg.base_channels, s = input_side;
      w.add("stem.conv", "conv3d", c, s, conv_params(cfg.in_channels, c, 3));
      w.add("stem.act", "relu", c, s);
      for (int b = 0; b < cfg.n_res_blocks; ++b) {
        const std::string p = "res" + std::to_string(b);
        w.add(p + ".conv1", "conv3d", c, s, conv_params(c, c, 3));
        w.add(p + ".act", "relu", c, s);
        w.add(p + ".conv2", "conv3d", c, s, conv_params(c, c, 3));
        w.add(p + ".add", "add", c, s);
      }
      w.add("head.conv", "conv3d", 1, s, conv_params(c, 1, 1));
      w.add("head.act", "sigmoid", 1, s);
      break;
    }
    case NetFamily::discriminator: {
      std::int64_t s = input_side, cin = cfg.in_channels;
      for (int b = 0; b < cfg.depth; ++b) {
        const std::int64_t c = channels_at(cfg, b);
        s = conv_side(s, 4, 2, 1);
        const std::string p = "block" + std::to_string(b);
        w.add(p + ".conv", "conv3d", c, s, conv_params(cin, c, 4));
        if (b > 0) w.add(p + ".norm", "instance_norm", c, s, 2 * c);
        w.add(p + ".act", "leaky_relu", c, s);
        cin = c;
      }
      w.add("head.conv", "conv3d", 1, s, conv_params(cin, 1, 1));
      w.add("head.act", "sigmoid", 1, s);
      break;
    }
  }
  if (out.back().output[2] != out_side) throw std::logic_error("summary side disagrees with output_side");
  return out;
}

template <typename T>
Network<T>::Network(NetConfig cfg) : cfg_(cfg), dropout_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ull) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  switch (cfg_.family) {
    case NetFamily::lr_unet: {
      std::int64_t cin = cfg_.in_channels;
      std::vector<std::int64_t> skip;
      for (int l = 0; l < cfg_.depth; ++l) {
        const std::int64_t c = channels_at(cfg_, l);
        const std::string p = "enc" + std::to_string(l);
        add_conv(p + ".conv", cin, c, 3, 2, 1, PadMode::replicate, false, rng);
        if (l > 0) add_norm(p + ".norm", c);
        skip.push_back(c);
        cin = c;
      }
      for (int l = cfg_.depth - 2; l >= 0; --l) {
        const std::int64_t c = channels_at(cfg_, l);
        const std::string p = "dec" + std::to_string(l);
        add_conv(p + ".upconv", cin, c, 2, 2, 0, PadMode::zero, true, rng);
        add_norm(p + ".norm", c);
        cin = c + skip[static_cast<std::size_t>(l)];
      }
      add_conv("head.conv", cin, 1, 3, 1, 1, PadMode::replicate, false, rng);
      break;
    }
    case NetFamily::hr_resnet: {
      // No normalization: per-patch statistics would make outputs depend on
      // where the patch was cut. Fan-in scaled init instead, with the second
      // conv of each residual branch damped.
      const std::int64_t c = cfg_.base_channels;
      const auto he = [](std::int64_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
      add_conv("stem.conv", cfg_.in_channels, c, 3, 1, 1, PadMode::replicate, false, rng, he(cfg_.in_channels * 27));
      for (int b = 0; b < cfg_.n_res_blocks; ++b) {
        const std::string p = "res" + std::to_string(b);
        add_conv(p + ".conv1", c, c, 3, 1, 1, PadMode::replicate, false, rng, he(c * 27));
        add_conv(p + ".conv2", c, c, 3, 1, 1, PadMode::replicate, false, rng, 0.1 * he(c * 27));
      }
      add_conv("head.conv", c, 1, 1, 1, 0, PadMode::zero, false, rng, std::sqrt(1.0 / static_cast<double>(c)));
      break;
    }
    case NetFamily::discriminator: {
      std::int64_t cin = cfg_.in_channels;
      for (int b = 0; b < cfg_.depth; ++b) {
        const std::int64_t c = channels_at(cfg_, b);
        const std::string p = "block" + std::to_string(b);
        add_conv(p + ".conv", cin, c, 4, 2, 1, PadMode::zero, false, rng);
        if (b > 0) add_norm(p + ".norm", c);
        cin = c;
      }
      add_conv("head.conv", cin, 1, 1, 1, 0, PadMode::zero, false, rng);
      break;
    }
  }
}

template <typename T>
typename Network<T>::Conv& Network<T>::add_conv(const std::string& name, std::int64_t cin, std::int64_t cout,
                                                std::int64_t k, std::int64_t stride, std::int64_t padding,
                                                PadMode mode, bool transpose, std::mt19937_64& rng,
                                                double init_std) {
  Conv c;
  c.k = k;
  c.stride = stride;
  c.padding = padding;
  c.mode = mode;
  c.transpose = transpose;
  const Shape ws = transpose ? Shape{cin, cout, k, k, k} : Shape{cout, cin, k, k, k};
  std::vector<T> init(static_cast<std::size_t>(numel(ws)));
  std::normal_distribution<double> normal(0.0, init_std);
  for (auto& v : init) v = static_cast<T>(normal(rng));
  c.weight = Tensor<T>::from(ws, init, true);
  c.bias = Tensor<T>::zeros({cout}, true);
  names_.push_back(name + ".weight");
  params_.push_back(c.weight);
  names_.push_back(name + ".bias");
  params_.push_back(c.bias);
  convs_.push_back(std::move(c));
  return convs_.back();
}

template <typename T>
typename Network<T>::Norm& Network<T>::add_norm(const std::string& name, std::int64_t c) {
  Norm n{Tensor<T>::full({c}, T(1), true), Tensor<T>::zeros({c}, true)};
  names_.push_back(name + ".gamma");
  params_.push_back(n.gamma);
  names_.push_back(name + ".beta");
  params_.push_back(n.beta);
  norms_.push_back(std::move(n));
  return norms_.back();
}

template <typename T>
Tensor<T> Network<T>::apply(const Conv& c, const Tensor<T>& x) const {
  if (c.transpose) return conv3d_transpose(x, c.weight, c.bias, c.stride, c.padding);
  return conv3d(x, c.weight, c.bias, ConvOptions{c.stride, c.padding, c.mode});
}

namespace {

template <typename T>
const Tensor<T>& traced(std::vector<LayerSummary>* trace, const std::string& name, const std::string& kind,
                        const Tensor<T>& t) {
  if (trace) trace->push_back({name, kind, t.shape(), 0});
  return t;
}

}  // namespace

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& x, bool training, std::vector<LayerSummary>* trace) {
  if (x.shape().size() != 5 || x.dim(0) != 1 || x.dim(1) != cfg_.in_channels)
    throw ValidationError(to_string(cfg_.family) + " expects input [1," + std::to_string(cfg_.in_channels) +
                          ",s,s,s], got " + to_string(x.shape()));
  if (x.dim(2) != x.dim(3) || x.dim(2) != x.dim(4))
    throw ValidationError(to_string(cfg_.family) + " expects a cubic input, got " + to_string(x.shape()));
  output_side(cfg_, x.dim(2));
  switch (cfg_.family) {
    case NetFamily::lr_unet: return forward_lr(x, training, trace);
    case NetFamily::hr_resnet: return forward_hr(x, trace);
    case NetFamily::discriminator: return forward_d(x, trace);
  }
  return {};
}

template <typename T>
Tensor<T> Network<T>::forward_lr(const Tensor<T>& x, bool training, std::vector<LayerSummary>* trace) {
  std::size_t ci = 0, ni = 0;
  std::vector<Tensor<T>> skips;
  Tensor<T> h = x;
  for (int l = 0; l < cfg_.depth; ++l) {
    const std::string p = "enc" + std::to_string(l);
    h = traced(trace, p + ".conv", "conv3d", apply(convs_[ci++], h));
    if (l > 0) {
      const Norm& n = norms_[ni++];
      h = traced(trace, p + ".norm", "instance_norm", instance_norm(h, n.gamma, n.beta));
    }
    h = traced(trace, p + ".act", "leaky_relu", leaky_relu(h, kLeakySlope));
    skips.push_back(h);
  }
  for (int l = cfg_.depth - 2; l >= 0; --l) {
    const std::string p = "dec" + std::to_string(l);
    h = traced(trace, p + ".upconv", "conv3d_transpose", apply(convs_[ci++], h));
    const Norm& n = norms_[ni++];
    h = traced(trace, p + ".norm", "instance_norm", instance_norm(h, n.gamma, n.beta));
    h = traced(trace, p + ".act", "relu", relu(h));
    if (dropout_block(cfg_, l) && training)
      h = traced(trace, p + ".dropout", "dropout", dropout(h, cfg_.dropout, true, dropout_rng_));
    h = traced(trace, p + ".concat", "concat", concat_channels<T>({h, skips[static_cast<std::size_t>(l)]}));
  }
  h = traced(trace, "head.conv", "conv3d", apply(convs_[ci++], h));
  return traced(trace, "head.act", "sigmoid", sigmoid(h));
}

template <typename T>
Tensor<T> Network<T>::forward_hr(const Tensor<T>& x, std::vector<LayerSummary>* trace) {
  std::size_t ci = 0;
  Tensor<T> h = traced(trace, "stem.conv", "conv3d", apply(convs_[ci++], x));
  h = traced(trace, "stem.act", "relu", relu(h));
  for (int b = 0; b < cfg_.n_res_blocks; ++b) {
    const std::string p = "res" + std::to_string(b);
    Tensor<T> r = traced(trace, p + ".conv1", "conv3d", apply(convs_[ci++], h));
    r = traced(trace, p + ".act", "relu", relu(r));
    r = traced(trace, p + ".conv2", "conv3d", apply(convs_[ci++], r));
    h = traced(trace, p + ".add", "add", add(h, r));
  }
  h = traced(trace, "head.conv", "conv3d", apply(convs_[ci++], h));
  return traced(trace, "head.act", "sigmoid", sigmoid(h));
}

template <typename T>
Tensor<T> Network<T>::forward_d(const Tensor<T>& x, std::vector<LayerSummary>* trace) {
  std::size_t ci = 0, ni = 0;
  Tensor<T> h = x;
  for (int b = 0; b < cfg_.depth; ++b) {
    const std::string p = "block" + std::to_string(b);
    h = traced(trace, p + ".conv", "conv3d", apply(convs_[ci++], h));
    if (b > 0) {
      const Norm& n = norms_[ni++];
      h = traced(trace, p + ".norm", "instance_norm", instance_norm(h, n.gamma, n.beta));
    }
    h = traced(trace, p + ".act", "leaky_relu", leaky_relu(h, kLeakySlope));
  }
  h = traced(trace, "head.conv", "conv3d", apply(convs_[ci++], h));
  return traced(trace, "head.act", "sigmoid", sigmoid(h));
}

template <typename T>
std::vector<Tensor<T>> Network<T>::parameters() const {
  return params_;
}

template <typename T>
std::int64_t Network<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

template <typename T>
void Network<T>::zero_head() {
  Conv& head = convs_.back();
  auto w = head.weight.mutable_values();
  std::fill(w.begin(), w.end(), T(0));
  auto b = head.bias.mutable_values();
  std::fill(b.begin(), b.end(), T(0));
}

template <typename T>
nlohmann::ordered_json Network<T>::architecture() const {
  nlohmann::ordered_json j;
  j["config"] = to_json(cfg_);
  j["valid_margin"] = valid_margin(cfg_);
  auto& params = j["parameters"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < params_.size(); ++i)
    params.push_back({{"name", names_[i]}, {"shape", params_[i].shape()}});
  auto& layers = j["convolutions"] = nlohmann::ordered_json::array();
  for (const auto& c : convs_) {
    layers.push_back({{"kernel", c.k},
                      {"stride", c.stride},
                      {"padding", c.padding},
                      {"pad_mode", c.mode == PadMode::zero ? "zero" : "replicate"},
                      {"transpose", c.transpose},
                      {"weight_shape", c.weight.shape()}});
  }
  return j;
}

template <typename T>
Tensor<T> discriminator_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
  const double hi = 1.0 - kScoreFloor;
  const Tensor<T> real_term = affine(mean(log_clamped(d_real, kScoreFloor, hi)), -1.0, 0.0);
  const Tensor<T> fake_term = affine(mean(log_clamped(affine(d_fake, -1.0, 1.0), kScoreFloor, hi)), -1.0, 0.0);
  return add(real_term, fake_term);
}

template <typename T>
Tensor<T> generator_adversarial_loss(const Tensor<T>& d_fake) {
  return affine(mean(log_clamped(d_fake, kScoreFloor, 1.0 - kScoreFloor)), -1.0, 0.0);
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& fake, const Tensor<T>& target) {
  return mean(abs(sub(fake, target)));
}

template <typename T>
GanLosses<T> gan_losses(const Tensor<T>& d_real, const Tensor<T>& d_fake, const Tensor<T>& fake,
                        const Tensor<T>& target, double lambda_l1) {
  GanLosses<T> out;
  if (d_real.defined() && d_fake.defined()) out.loss_d = discriminator_loss(d_real, d_fake);
  if (fake.defined() && target.defined()) out.loss_g_l1 = l1_loss(fake, target);
  if (d_fake.defined()) {
    out.loss_g_adv = generator_adversarial_loss(d_fake);
    out.loss_g = out.loss_g_l1.defined() ? add(out.loss_g_adv, affine(out.loss_g_l1, lambda_l1, 0.0)) : out.loss_g_adv;
  }
  return out;
}

template <typename T>
Checkpoint make_checkpoint(const Network<T>& net, nlohmann::ordered_json meta) {
  Checkpoint c;
  c.config = net.config();
  c.meta = std::move(meta);
  for (const auto& p : net.parameters())
    for (T v : p.values()) c.parameters.push_back(static_cast<float>(v));
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt, const nlohmann::ordered_json& architecture) {
  nlohmann::ordered_json header;
  header["architecture"] = architecture;
  header["scale"] = ckpt.config.scale;
  header["meta"] = ckpt.meta;
  header["parameter_count"] = ckpt.parameters.size();
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(9 + text.size() + 4 * ckpt.parameters.size());
  out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (float f : ckpt.parameters) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kCheckpointMagic, 5) != 0) throw FormatError("bad CKPT1 magic", 0);
  if (bytes.size() < 9) throw FormatError("missing CKPT1 header length", 5);
  const std::uint32_t len = detail::get_u32(bytes, 5);
  if (bytes.size() < 9ull + len) throw FormatError("CKPT1 header truncated", bytes.size());
  Checkpoint c;
  std::size_t count = 0;
  try {
    const auto header = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + len);
    c.config = net_config_from_json(header.at("architecture").at("config"));
    if (header.contains("meta")) c.meta = header.at("meta");
    count = header.at("parameter_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("CKPT1 header invalid: ") + e.what(), 9);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("CKPT1 config invalid: ") + e.what(), 9);
  }
  const std::size_t payload = 9ull + len;
  if (bytes.size() != payload + 4 * count)
    throw FormatError("CKPT1 payload holds " + std::to_string((bytes.size() - payload) / 4) + " floats, expected " +
                          std::to_string(count),
                      bytes.size() < payload + 4 * count ? bytes.size() : payload + 4 * count);
  c.parameters.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    c.parameters[i] = std::bit_cast<float>(detail::get_u32(bytes, payload + 4 * i));
  return c;
}

template <typename T>
void save_checkpoint(const Network<T>& net, const std::filesystem::path& path, nlohmann::ordered_json meta) {
  detail::write_bytes(path, encode_checkpoint(make_checkpoint(net, std::move(meta)), net.architecture()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(detail::read_bytes(path)); }

template <typename T>
Network<T> network_from_checkpoint(const Checkpoint& ckpt) {
  Network<T> net(ckpt.config);
  if (static_cast<std::int64_t>(ckpt.parameters.size()) != net.parameter_count())
    throw ValidationError("checkpoint holds " + std::to_string(ckpt.parameters.size()) +
                          " parameters, architecture needs " + std::to_string(net.parameter_count()));
  std::size_t at = 0;
  for (auto p : net.parameters())
    for (T& v : p.mutable_values()) v = static_cast<T>(ckpt.parameters[at++]);
  return net;
}

#define CASCADE3D_INSTANTIATE_NETWORKS(T)                                                                    \
  template class Network<T>;                                                                                 \
  template Tensor<T> discriminator_loss(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> generator_adversarial_loss(const Tensor<T>&);                                           \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                                            \
  template GanLosses<T> gan_losses(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                   double);                                                                  \
  template Checkpoint make_checkpoint(const Network<T>&, nlohmann::ordered_json);                            \
  template void save_checkpoint(const Network<T>&, const std::filesystem::path&, nlohmann::ordered_json);    \
  template Network<T> network_from_checkpoint(const Checkpoint&);

CASCADE3D_INSTANTIATE_NETWORKS(float)
CASCADE3D_INSTANTIATE_NETWORKS(double)

}  // namespace cascade3d::nn
