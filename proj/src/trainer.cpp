#include "cascade3d/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "cascade3d/errors.hpp"
#include "cascade3d/memory_tracker.hpp"

namespace cascade3d {

namespace {

using nn::Network;
using nn::Tensor;

void check_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string(what) + " must be in [0, 1]");
}

Volume3 resample_nearest(const Volume3& v, Shape3 target) {
  Volume3 out(target, v.spacing());
  const Shape3 s = v.shape();
  auto src = [](std::int64_t j, std::int64_t in, std::int64_t n) {
    return std::min<std::int64_t>(in - 1, (2 * j + 1) * in / (2 * n));
  };
  for (std::int64_t z = 0; z < target.nz; ++z)
    for (std::int64_t y = 0; y < target.ny; ++y)
      for (std::int64_t x = 0; x < target.nx; ++x)
        out(z, y, x) = v(src(z, s.nz, target.nz), src(y, s.ny, target.ny), src(x, s.nx, target.nx));
  return out;
}

Volume3 zeros_like(const Volume3& v) { return Volume3(v.shape(), v.spacing(), 0.0f); }

Tensor<float> channels(const std::vector<const Volume3*>& parts) {
  const Shape3 s = parts.front()->shape();
  const auto c = static_cast<std::int64_t>(parts.size());
  auto t = Tensor<float>::zeros({1, c, s.nz, s.ny, s.nx});
  auto dst = t.mutable_values();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i]->shape() != s) throw ValidationError("channel volumes differ in shape");
    std::copy(parts[i]->voxels().begin(), parts[i]->voxels().end(),
              dst.begin() + static_cast<std::ptrdiff_t>(i) * s.voxels());
  }
  return t;
}

Volume3 avg_down(const Volume3& v) {
  const Shape3 s = v.shape();
  if (s.nz % 2 || s.ny % 2 || s.nx % 2) throw ValidationError("2x downsampling needs even dimensions");
  Volume3 out({s.nz / 2, s.ny / 2, s.nx / 2},
              {v.spacing().sz * 2, v.spacing().sy * 2, v.spacing().sx * 2});
  for (std::int64_t z = 0; z < s.nz / 2; ++z)
    for (std::int64_t y = 0; y < s.ny / 2; ++y)
      for (std::int64_t x = 0; x < s.nx / 2; ++x) {
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) acc += v(2 * z + dz, 2 * y + dy, 2 * x + dx);
        out(z, y, x) = static_cast<float>(acc / 8.0);
      }
  return out;
}

bool finite(const LossRecord& r) {
  return std::isfinite(r.loss_d) && std::isfinite(r.loss_g_adv) && std::isfinite(r.loss_g_l1);
}

}  // namespace

void AugmentConfig::validate() const {
  check_probability(blur_prob, "blur probability");
  check_probability(halve_prob, "resolution-halving probability");
  if (noise_std < 0.0) throw ValidationError("noise std must be non-negative");
  if (!(blur_sigma_lo > 0.0 && blur_sigma_lo <= blur_sigma_hi)) throw ValidationError("blur sigma range invalid");
}

Volume3 halve_resolution(const Volume3& v) {
  const Volume3 low = avg_down(v);
  Volume3 out(v.shape(), v.spacing());
  const Shape3 s = v.shape();
  for (std::int64_t z = 0; z < s.nz; ++z)
    for (std::int64_t y = 0; y < s.ny; ++y)
      for (std::int64_t x = 0; x < s.nx; ++x) out(z, y, x) = low(z / 2, y / 2, x / 2);
  return out;
}

AugmentResult augment_patch(const Volume3& prev, const Volume3& sketch, const AugmentConfig& cfg,
                            std::mt19937_64& rng) {
  cfg.validate();
  if (prev.shape() != sketch.shape()) throw ValidationError("augment_patch: patch shapes differ");
  AugmentResult r{prev, sketch, false, false};
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Volume3* v : {&r.prev, &r.sketch})
    for (float& x : v->voxels()) {
      const double n = noise(rng);
      if (cfg.noise_std > 0.0) x = static_cast<float>(std::clamp(x + cfg.noise_std * n, 0.0, 1.0));
    }
  const double u_blur = unit(rng);
  const double sigma = cfg.blur_sigma_lo + (cfg.blur_sigma_hi - cfg.blur_sigma_lo) * unit(rng);
  const double u_halve = unit(rng);
  if (u_blur < cfg.blur_prob) {
    r.prev = gaussian_blur(r.prev, sigma);
    r.blurred = true;
  }
  if (u_halve < cfg.halve_prob) {
    r.prev = halve_resolution(r.prev);
    r.halved = true;
  }
  return r;
}

Volume3 to_working_grid(const Volume3& v, const ScalePlan& plan, Shape3 shape) {
  const Shape3 full = plan.final_working_shape();
  Volume3 embedded = v.shape() == full ? v : embed_centered(v, full);
  return shape == full ? embedded : resample_trilinear(embedded, shape);
}

std::vector<Volume3> build_image_pyramid(const Volume3& v, const ScalePlan& plan) {
  std::vector<Volume3> out;
  for (int i = 0; i <= plan.n_scales; ++i) out.push_back(to_working_grid(v, plan, plan.working_shape_at(i)));
  return out;
}

std::vector<Volume3> build_sketch_pyramid(const Volume3& source, const ScalePlan& plan, const SketchOptions& opt,
                                          const Volume3* mask) {
  std::optional<Volume3> full_mask;
  if (mask) {
    if (mask->shape() != source.shape()) throw ValidationError("mask shape differs from source shape");
    full_mask = mask->shape() == plan.final_working_shape() ? *mask : embed_centered(*mask, plan.final_working_shape());
  }
  std::map<std::int64_t, Volume3> cache;
  auto level = [&](Shape3 shape) -> const Volume3& {
    auto it = cache.find(shape.nz);
    if (it != cache.end()) return it->second;
    Sketch s = canny3d(to_working_grid(source, plan, shape), opt.canny);
    if (full_mask) {
      const Volume3 m = full_mask->shape() == shape ? *full_mask : resample_nearest(*full_mask, shape);
      s = overlay_labels(s, m, opt.label_transform);
    }
    return cache.emplace(shape.nz, std::move(s.field)).first->second;
  };
  std::vector<Volume3> out;
  out.push_back(level(plan.lr_sketch_shape()));
  for (int i = 1; i <= plan.n_scales; ++i) out.push_back(level(plan.working_shape_at(i)));
  return out;
}

ScalePyramid build_pyramid(const Volume3& target, const Volume3& sketch_source, const ScalePlan& plan,
                           const SketchOptions& opt, const Volume3* mask) {
  if (target.shape() != sketch_source.shape()) throw ValidationError("target and sketch source differ in shape");
  ScalePyramid p;
  p.images = build_image_pyramid(target, plan);
  p.sketches = build_sketch_pyramid(sketch_source, plan, opt, mask);
  if (mask) p.mask = to_working_grid(*mask, plan, plan.final_working_shape());
  return p;
}

TrainConfig TrainConfig::defaults(int scale, std::uint64_t seed) {
  TrainConfig c;
  c.scale = scale;
  c.seed = seed;
  c.generator = scale == 0 ? nn::NetConfig::lr_unet(seed * 2 + 1) : nn::NetConfig::hr_resnet(scale, seed * 2 + 1);
  c.discriminator = nn::NetConfig::discriminator(scale, seed * 2 + 2);
  return c;
}

void TrainConfig::validate() const {
  if (scale < 0) throw ValidationError("scale must be non-negative");
  if (epochs < 1) throw ValidationError("epochs must be at least 1");
  if (steps_per_volume < 1) throw ValidationError("steps per volume must be at least 1");
  if (lambda_l1 < 0.0) throw ValidationError("lambda_l1 must be non-negative");
  check_probability(mask_fraction, "mask fraction");
  augment.validate();
  generator.validate();
  discriminator.validate();
  if (generator.scale != scale || discriminator.scale != scale)
    throw ValidationError("network configs belong to a different scale");
  if ((scale == 0) != (generator.family == nn::NetFamily::lr_unet))
    throw ValidationError("scale 0 uses the LR U-Net and HR scales the ResNet generator");
  if (discriminator.family != nn::NetFamily::discriminator) throw ValidationError("discriminator config expected");
}

namespace {

struct Sample {
  Tensor<float> g_input;  // generator input
  Tensor<float> cond;     // discriminator conditioning channels
  Tensor<float> target;
};

Sample lr_sample(const ScalePyramid& ex, bool use_edges) {
  const Volume3 sketch = use_edges ? ex.sketches[0] : zeros_like(ex.sketches[0]);
  const Volume3 sketch_down = avg_down(sketch);
  return {channels({&sketch}), channels({&sketch_down}), channels({&ex.images[0]})};
}

Box3 sample_out_region(const ScalePyramid& ex, const ScalePlan& plan, int scale, bool on_mask, std::mt19937_64& rng) {
  const std::int64_t side = plan.side_at(scale), p = plan.patch_side;
  // Even starts keep the previous-scale region on integer coordinates.
  const std::int64_t max_half = (side - p) / 2;
  Box3 box;
  box.size = {p, p, p};
  std::array<std::int64_t, 3> lo_half{0, 0, 0}, hi_half{max_half, max_half, max_half};
  if (on_mask) {
    const Volume3& m = *ex.mask;
    const std::int64_t factor = plan.final_working_shape().nz / side;
    std::vector<std::int64_t> hits;
    const auto vox = m.voxels();
    for (std::int64_t i = 0; i < m.size(); ++i)
      if (vox[static_cast<std::size_t>(i)] > 0.5f) hits.push_back(i);
    if (!hits.empty()) {
      const std::int64_t pick = hits[std::uniform_int_distribution<std::size_t>(0, hits.size() - 1)(rng)];
      const std::int64_t n = m.shape().nx;
      const std::array<std::int64_t, 3> at{pick / (n * n) / factor, (pick / n) % n / factor, pick % n / factor};
      for (int a = 0; a < 3; ++a) {
        lo_half[a] = std::clamp<std::int64_t>((at[a] - p + 2) / 2, 0, max_half);
        hi_half[a] = std::clamp<std::int64_t>(at[a] / 2, lo_half[a], max_half);
      }
    }
  }
  for (int a = 0; a < 3; ++a)
    box.lo[a] = 2 * std::uniform_int_distribution<std::int64_t>(lo_half[a], hi_half[a])(rng);
  return box;
}

Sample hr_sample(const ScalePyramid& ex, const ScalePlan& plan, const TrainConfig& cfg, std::mt19937_64& rng) {
  const int i = cfg.scale;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool on_mask = unit(rng) < cfg.mask_fraction && ex.mask.has_value();
  const Box3 out = sample_out_region(ex, plan, i, on_mask, rng);
  Box3 in = out;
  for (int a = 0; a < 3; ++a) in.lo[a] = out.lo[a] / 2 - plan.patch_side / 4;

  const Volume3 prev_patch = extract_patch(ex.images[static_cast<std::size_t>(i - 1)], in);
  const Volume3 sketch_patch = extract_patch(ex.sketches[static_cast<std::size_t>(i)], out);
  AugmentResult aug = augment_patch(prev_patch, sketch_patch, cfg.augment, rng);
  Volume3 prev_up = upsample_center(aug.prev);
  if (!cfg.use_prev_scale) prev_up = zeros_like(prev_up);
  if (!cfg.use_edges) aug.sketch = zeros_like(aug.sketch);
  const Volume3 target = extract_patch(ex.images[static_cast<std::size_t>(i)], out);
  return {channels({&aug.sketch, &prev_up}), channels({&aug.sketch, &prev_up}), channels({&target})};
}

}  // namespace

int max_discriminator_depth(std::int64_t input_side) {
  int depth = 0;
  while ((input_side >> (depth + 1)) >= 2) ++depth;
  return depth;
}

TrainResult train_scale(const std::vector<ScalePyramid>& data, const ScalePlan& plan, const TrainConfig& cfg,
                        const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.empty()) throw ValidationError("training set is empty");
  if (cfg.scale > plan.n_scales)
    throw ValidationError("scale " + std::to_string(cfg.scale) + " beyond the plan's " +
                          std::to_string(plan.n_scales) + " HR scales");
  for (const auto& ex : data) {
    if (static_cast<int>(ex.images.size()) != plan.n_scales + 1 ||
        static_cast<int>(ex.sketches.size()) != plan.n_scales + 1)
      throw ValidationError("pyramid depth does not match the plan");
    if (ex.sketches[0].shape() != plan.lr_sketch_shape() || ex.images[0].shape() != plan.working_shape_at(0))
      throw ValidationError("pyramid shapes do not match the plan");
  }
  // Instance norm over a single voxel is identically zero, so the score map
  // must keep at least 2 voxels per axis.
  const std::int64_t d_side = cfg.scale == 0 ? plan.lr_side : plan.patch_side;
  if ((d_side >> cfg.discriminator.depth) < 2)
    throw ValidationError("discriminator depth " + std::to_string(cfg.discriminator.depth) + " reduces a " +
                          std::to_string(d_side) + "^3 input below a 2^3 score map; use at most " +
                          std::to_string(max_discriminator_depth(d_side)) + " blocks");

  TrainResult res{Network<float>(cfg.generator), Network<float>(cfg.discriminator), {}};
  auto& g = res.generator;
  auto& d = res.discriminator;
  nn::Adam<float> opt_g(g.parameters(), cfg.adam);
  nn::Adam<float> opt_d(d.parameters(), cfg.adam);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      for (int s = 0; s < cfg.steps_per_volume; ++s) {
        const Sample smp = cfg.scale == 0 ? lr_sample(data[idx], cfg.use_edges) : hr_sample(data[idx], plan, cfg, rng);
        const Tensor<float> fake = g.forward(smp.g_input, true);

        opt_d.zero_grad();
        const Tensor<float> d_real = d.forward(nn::concat_channels<float>({smp.cond, smp.target}), true);
        const Tensor<float> d_fake = d.forward(nn::concat_channels<float>({smp.cond, fake.detach()}), true);
        const Tensor<float> loss_d = nn::discriminator_loss(d_real, d_fake);
        loss_d.backward();
        opt_d.step();

        opt_g.zero_grad();
        const Tensor<float> d_gen = d.forward(nn::concat_channels<float>({smp.cond, fake}), true);
        const auto losses = nn::gan_losses(Tensor<float>(), d_gen, fake, smp.target, cfg.lambda_l1);
        losses.loss_g.backward();
        opt_g.step();

        LossRecord rec{step++, loss_d.item(), losses.loss_g_adv.item(), losses.loss_g_l1.item()};
        res.log.push_back(rec);
        if (!finite(rec)) {
          std::ostringstream os;
          os << "non-finite loss at scale " << cfg.scale << " step " << rec.step << " (loss_D=" << rec.loss_d
             << ", loss_G_adv=" << rec.loss_g_adv << ", loss_G_L1=" << rec.loss_g_l1 << ")";
          throw TrainingDiverged(os.str(), res.log);
        }
      }
    }
    if (on_epoch) on_epoch(epoch, g, d);
  }
  return res;
}

void write_loss_csv(const std::vector<LossRecord>& log, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "step,loss_D,loss_G_adv,loss_G_L1\n" << std::setprecision(9);
  for (const auto& r : log) os << r.step << ',' << r.loss_d << ',' << r.loss_g_adv << ',' << r.loss_g_l1 << '\n';
}

nn::Tensor<float> to_tensor(const Volume3& v) { return channels({&v}); }

Volume3 from_tensor(const nn::Tensor<float>& t, Spacing3 spacing) {
  const auto& s = t.shape();
  if (s.size() != 5 || s[0] != 1 || s[1] != 1) throw ValidationError("expected a [1,1,z,y,x] tensor, got " + nn::to_string(s));
  return Volume3({s[2], s[3], s[4]}, spacing, t.values());
}

NetworkCascade::NetworkCascade(std::vector<nn::Network<float>> generators) : generators_(std::move(generators)) {
  if (generators_.empty()) throw ValidationError("cascade needs at least the LR generator");
  for (std::size_t i = 0; i < generators_.size(); ++i) {
    const auto& c = generators_[i].config();
    if (c.scale != static_cast<int>(i))
      throw ValidationError("generator " + std::to_string(i) + " was trained for scale " + std::to_string(c.scale));
    if ((i == 0) != (c.family == nn::NetFamily::lr_unet))
      throw ValidationError("generator " + std::to_string(i) + " has the wrong family " + nn::to_string(c.family));
  }
}

Volume3 NetworkCascade::generate_lr(const Volume3& lr_sketch) {
  nn::NoGradGuard no_grad;
  return from_tensor(generators_[0].forward(to_tensor(lr_sketch), false));
}

Volume3 NetworkCascade::generate_patch(int scale, const Volume3& sketch_patch, const Volume3& prev_up) {
  if (scale < 1 || scale >= static_cast<int>(generators_.size()))
    throw ValidationError("no generator for scale " + std::to_string(scale));
  nn::NoGradGuard no_grad;
  return from_tensor(generators_[static_cast<std::size_t>(scale)].forward(channels({&sketch_patch, &prev_up}), false));
}

CascadeResult infer_cascade(const std::vector<Volume3>& sketches, CascadeGenerator& generator, const ScalePlan& plan,
                            const CascadeOptions& opt) {
  if (static_cast<int>(sketches.size()) != plan.n_scales + 1)
    throw ValidationError("sketch pyramid has " + std::to_string(sketches.size()) + " levels, plan needs " +
                          std::to_string(plan.n_scales + 1));
  if (sketches[0].shape() != plan.lr_sketch_shape())
    throw ValidationError("LR sketch shape " + to_string(sketches[0].shape()) + " differs from " +
                          to_string(plan.lr_sketch_shape()));
  for (int i = 1; i <= plan.n_scales; ++i)
    if (sketches[static_cast<std::size_t>(i)].shape() != plan.working_shape_at(i))
      throw ValidationError("sketch level " + std::to_string(i) + " has the wrong shape");

  CascadeResult res;
  res.jobs.emplace_back();
  {
    ScaleStats st;
    MemoryScope scope;
    res.scales.push_back(generator.generate_lr(opt.use_edges ? sketches[0] : zeros_like(sketches[0])));
    st.scale_peak = scope.peak_above_baseline();
    res.stats.push_back(st);
  }
  if (res.scales[0].shape() != plan.working_shape_at(0))
    throw ValidationError("LR generator returned shape " + to_string(res.scales[0].shape()));

  for (int i = 1; i <= plan.n_scales; ++i) {
    ScaleStats st;
    st.scale = i;
    auto jobs = patch_grid(plan, i, opt.valid_margin);
    st.jobs = static_cast<std::int64_t>(jobs.size());
    const Volume3& prev = res.scales.back();
    const Volume3& sketch = sketches[static_cast<std::size_t>(i)];
    MemoryScope scale_scope;
    Assembler assembler(plan.working_shape_at(i));
    for (const auto& job : jobs) {
      MemoryScope job_scope;
      Volume3 sketch_patch = extract_patch(sketch, job.out_region);
      Volume3 prev_up = upsample_center(extract_patch(prev, job.in_region));
      if (!opt.use_edges) sketch_patch = zeros_like(sketch_patch);
      if (!opt.use_prev_scale) prev_up = zeros_like(prev_up);
      const Volume3 out = generator.generate_patch(i, sketch_patch, prev_up);
      if (out.shape() != job.out_region.shape())
        throw ValidationError("patch generator returned shape " + to_string(out.shape()));
      assembler.paste(job, out);
      st.patch_workspace_peak = std::max(st.patch_workspace_peak, job_scope.peak_above_baseline());
    }
    Volume3 next = std::move(assembler).finish();
    st.scale_peak = scale_scope.peak_above_baseline();
    res.scales.push_back(std::move(next));
    res.stats.push_back(st);
    res.jobs.push_back(std::move(jobs));
  }

  const Box3 crop = plan.crop_box();
  const Volume3& last = res.scales.back();
  res.output = last.shape() == plan.original_shape ? last : extract_patch(last, crop);
  return res;
}

}  // namespace cascade3d
