#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cascade3d/ops.hpp"
#include "cascade3d/tensor.hpp"

namespace cascade3d::nn {

// Default weight init std; the HR generator overrides it per layer.
inline constexpr double kInitStd = 0.02;

enum class NetFamily { lr_unet, hr_resnet, discriminator };

std::string to_string(NetFamily f);
NetFamily parse_net_family(const std::string& name);

struct NetConfig {
  NetFamily family = NetFamily::hr_resnet;
  int in_channels = 2;
  int base_channels = 32;
  int depth = 4;         // lr_unet encoder levels, discriminator blocks
  int n_res_blocks = 6;  // hr_resnet only
  double dropout = 0.5;  // lr_unet, two innermost decoder blocks
  int scale = 0;
  std::uint64_t seed = 0;

  // Defaults for each family. Channel plans follow the per-scale signatures:
  // G_0 sees the sketch, G_i sees (sketch, previous scale), D_0 sees
  // (sketch, image) and D_i sees (sketch, previous scale, image).
  static NetConfig lr_unet(std::uint64_t seed = 0);
  static NetConfig hr_resnet(int scale = 1, std::uint64_t seed = 0);
  static NetConfig discriminator(int scale = 0, std::uint64_t seed = 0);

  void validate() const;
};

nlohmann::ordered_json to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const nlohmann::json& j);

// One retained op output of a forward pass.
struct LayerSummary {
  std::string name;
  std::string kind;
  Shape output;
  std::int64_t params = 0;
};

// Analytic layer walk for a batch-1 cubic input of side `input_side`. Mirrors
// the op outputs created by Network::forward in training mode.
std::vector<LayerSummary> summarize(const NetConfig& cfg, std::int64_t input_side);

// Border of an HR patch contaminated by padding: ceil(sqrt(sum of pad^2)) over
// the stacked spatial convolutions.
std::int64_t valid_margin(const NetConfig& cfg);

// Output side for a cubic input, or throws ValidationError.
std::int64_t output_side(const NetConfig& cfg, std::int64_t input_side);

template <typename T>
class Network {
 public:
  explicit Network(NetConfig cfg);

  const NetConfig& config() const noexcept { return cfg_; }

  // x: [1, in_channels, s, s, s]. Dropout is active only when training.
  Tensor<T> forward(const Tensor<T>& x, bool training, std::vector<LayerSummary>* trace = nullptr);

  std::vector<Tensor<T>> parameters() const;
  const std::vector<std::string>& parameter_names() const noexcept { return names_; }
  std::int64_t parameter_count() const;

  // Zeroes the head convolution so the sigmoid output is exactly 0.5.
  void zero_head();

  nlohmann::ordered_json architecture() const;

  // Re-seeds the dropout stream.
  void seed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

 private:
  struct Conv {
    Tensor<T> weight, bias;
    std::int64_t k = 3, stride = 1, padding = 0;
    PadMode mode = PadMode::zero;
    bool transpose = false;
  };
  struct Norm {
    Tensor<T> gamma, beta;
  };

  Conv& add_conv(const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t stride,
                 std::int64_t padding, PadMode mode, bool transpose, std::mt19937_64& rng, double init_std = kInitStd);
  Norm& add_norm(const std::string& name, std::int64_t c);
  Tensor<T> apply(const Conv& c, const Tensor<T>& x) const;

  Tensor<T> forward_lr(const Tensor<T>& x, bool training, std::vector<LayerSummary>* trace);
  Tensor<T> forward_hr(const Tensor<T>& x, std::vector<LayerSummary>* trace);
  Tensor<T> forward_d(const Tensor<T>& x, std::vector<LayerSummary>* trace);

  NetConfig cfg_;
  std::vector<Conv> convs_;
  std::vector<Norm> norms_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> params_;
  std::mt19937_64 dropout_rng_;
};

extern template class Network<float>;
extern template class Network<double>;

// Scores are clamped to [kScoreFloor, 1 - kScoreFloor] before the log.
inline constexpr double kScoreFloor = 1e-7;

template <typename T>
struct GanLosses {
  Tensor<T> loss_d;
  Tensor<T> loss_g;
  Tensor<T> loss_g_adv;
  Tensor<T> loss_g_l1;  // unweighted mean |fake - target|
};

// loss_D = -mean log D(real) - mean log(1 - D(fake));
// loss_G = -mean log D(fake) + lambda * mean |fake - target|.
// Either score tensor may be undefined, in which case the terms that need it
// are left undefined.
template <typename T>
GanLosses<T> gan_losses(const Tensor<T>& d_real, const Tensor<T>& d_fake, const Tensor<T>& fake,
                        const Tensor<T>& target, double lambda_l1);

template <typename T>
Tensor<T> discriminator_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake);
template <typename T>
Tensor<T> generator_adversarial_loss(const Tensor<T>& d_fake);
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& fake, const Tensor<T>& target);

// CKPT1: "CKPT1" | u32 LE JSON length | JSON | f32 LE parameters in
// declaration order.
struct Checkpoint {
  NetConfig config;
  nlohmann::ordered_json meta;  // free-form: step, epoch, training seed
  std::vector<float> parameters;
};

template <typename T>
Checkpoint make_checkpoint(const Network<T>& net, nlohmann::ordered_json meta = nlohmann::ordered_json::object());
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt, const nlohmann::ordered_json& architecture);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
template <typename T>
void save_checkpoint(const Network<T>& net, const std::filesystem::path& path,
                     nlohmann::ordered_json meta = nlohmann::ordered_json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);
template <typename T>
Network<T> network_from_checkpoint(const Checkpoint& ckpt);

}  // namespace cascade3d::nn
