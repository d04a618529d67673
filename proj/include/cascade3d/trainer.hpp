#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cascade3d/networks.hpp"
#include "cascade3d/optim.hpp"
#include "cascade3d/scale_plan.hpp"
#include "cascade3d/sketch.hpp"
#include "cascade3d/volume.hpp"

namespace cascade3d {

struct AugmentConfig {
  double noise_std = 0.05;
  double blur_prob = 0.30;
  double blur_sigma_lo = 0.5;
  double blur_sigma_hi = 1.0;
  double halve_prob = 0.20;

  void validate() const;
  static AugmentConfig none() { return {0.0, 0.0, 0.5, 1.0, 0.0}; }
};

struct AugmentResult {
  Volume3 prev;
  Volume3 sketch;
  bool blurred = false;
  bool halved = false;
};

// Additive Gaussian noise (clamped to [0,1]) on both patches; then, on the
// previous-scale patch only, Gaussian blur with probability blur_prob and a
// 2x average-down / nearest-up round trip with probability halve_prob. The
// same number of variates is drawn on every call.
AugmentResult augment_patch(const Volume3& prev, const Volume3& sketch, const AugmentConfig& cfg, std::mt19937_64& rng);

// 2x box average followed by 2x nearest replication; dims must be even.
Volume3 halve_resolution(const Volume3& v);

// Per-scale images and sketches of one training volume. images[i] and
// sketches[i] for i >= 1 live on working_shape_at(i); sketches[0] is the
// LR conditioning at twice the LR side. mask, when present, is on the final
// working grid.
struct ScalePyramid {
  std::vector<Volume3> images;
  std::vector<Volume3> sketches;
  std::optional<Volume3> mask;
};

struct SketchOptions {
  CannyParams canny;
  LabelTransform label_transform = LabelTransform::identity;
};

// Embeds `v` centred in the final working grid, then resamples to `shape`.
Volume3 to_working_grid(const Volume3& v, const ScalePlan& plan, Shape3 shape);
std::vector<Volume3> build_image_pyramid(const Volume3& v, const ScalePlan& plan);
// Canny sketches extracted from `source` resampled to each level, with the
// mask (if any) overlaid after nearest resampling.
std::vector<Volume3> build_sketch_pyramid(const Volume3& source, const ScalePlan& plan, const SketchOptions& opt = {},
                                          const Volume3* mask = nullptr);
// Target images from `target`, sketches from `sketch_source`.
ScalePyramid build_pyramid(const Volume3& target, const Volume3& sketch_source, const ScalePlan& plan,
                           const SketchOptions& opt = {}, const Volume3* mask = nullptr);

struct TrainConfig {
  int scale = 0;
  int epochs = 1;
  int steps_per_volume = 4;  // patches (or whole LR images) per volume per epoch
  nn::AdamOptions adam;
  double lambda_l1 = 100.0;
  AugmentConfig augment;
  double mask_fraction = 0.5;  // share of HR patches forced onto the mask
  std::uint64_t seed = 0;
  bool use_edges = true;
  bool use_prev_scale = true;
  nn::NetConfig generator;
  nn::NetConfig discriminator;

  // Family defaults for `scale`.
  static TrainConfig defaults(int scale, std::uint64_t seed = 0);
  void validate() const;
};

struct LossRecord {
  std::int64_t step = 0;
  double loss_d = 0.0;
  double loss_g_adv = 0.0;
  double loss_g_l1 = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::vector<LossRecord> history)
      : std::runtime_error(what), history_(std::move(history)) {}
  const std::vector<LossRecord>& history() const noexcept { return history_; }

 private:
  std::vector<LossRecord> history_;
};

struct TrainResult {
  nn::Network<float> generator;
  nn::Network<float> discriminator;
  std::vector<LossRecord> log;
};

using EpochCallback = std::function<void(int epoch, const nn::Network<float>& g, const nn::Network<float>& d)>;

// Most stride-2 discriminator blocks that leave a score map of at least 2^3.
int max_discriminator_depth(std::int64_t input_side);

// Alternating optimisation for one scale: per sample one discriminator step
// on (real, fake) pairs, then one generator step on adversarial + lambda * L1.
// Scale 0 trains on whole LR images; scales >= 1 on aligned random patches
// whose previous-scale input is the real image (teacher forcing) augmented.
TrainResult train_scale(const std::vector<ScalePyramid>& data, const ScalePlan& plan, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {});

void write_loss_csv(const std::vector<LossRecord>& log, const std::filesystem::path& path);

// Generator pair driving the cascade.
class CascadeGenerator {
 public:
  virtual ~CascadeGenerator() = default;
  // lr_sketch on the 2 * lr_side grid -> LR image on the lr_side grid.
  virtual Volume3 generate_lr(const Volume3& lr_sketch) = 0;
  // Patches on the scale-i grid; returns a patch of the same shape.
  virtual Volume3 generate_patch(int scale, const Volume3& sketch_patch, const Volume3& prev_up) = 0;
};

// Returns a fixed LR image and the upsampled previous-scale patch unchanged.
class IdentityCascade final : public CascadeGenerator {
 public:
  explicit IdentityCascade(Volume3 lr_image) : lr_(std::move(lr_image)) {}
  Volume3 generate_lr(const Volume3&) override { return lr_; }
  Volume3 generate_patch(int, const Volume3&, const Volume3& prev_up) override { return prev_up; }

 private:
  Volume3 lr_;
};

// Trained networks: generators[0] is G_0, generators[i] is G_i.
class NetworkCascade final : public CascadeGenerator {
 public:
  explicit NetworkCascade(std::vector<nn::Network<float>> generators);
  Volume3 generate_lr(const Volume3& lr_sketch) override;
  Volume3 generate_patch(int scale, const Volume3& sketch_patch, const Volume3& prev_up) override;
  int scales() const noexcept { return static_cast<int>(generators_.size()); }

 private:
  std::vector<nn::Network<float>> generators_;
};

struct CascadeOptions {
  std::int64_t valid_margin = 4;
  bool use_edges = true;       // every scale sees a zero sketch when false
  bool use_prev_scale = true;  // HR scales see a zero previous-scale channel when false
};

struct ScaleStats {
  int scale = 0;
  std::int64_t jobs = 0;
  // High-water mark of tracked bytes within any single patch job, including
  // its extracted patches, network activations and output patch.
  std::int64_t patch_workspace_peak = 0;
  // High-water mark for the whole scale above the level before it started,
  // which includes the new scale's output buffer.
  std::int64_t scale_peak = 0;
};

struct CascadeResult {
  std::vector<Volume3> scales;  // working grids y_0..y_n
  Volume3 output;               // y_n cropped to the original shape
  std::vector<ScaleStats> stats;
  std::vector<std::vector<PatchJob>> jobs;  // per scale; jobs[0] empty
};

CascadeResult infer_cascade(const std::vector<Volume3>& sketches, CascadeGenerator& generator, const ScalePlan& plan,
                            const CascadeOptions& opt = {});

// Wraps a volume as a [1,1,z,y,x] tensor and back.
nn::Tensor<float> to_tensor(const Volume3& v);
Volume3 from_tensor(const nn::Tensor<float>& t, Spacing3 spacing = {});

}  // namespace cascade3d
