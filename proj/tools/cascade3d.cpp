#include <omp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cascade3d/errors.hpp"
#include "cascade3d/gradcheck.hpp"
#include "cascade3d/memory_model.hpp"
#include "cascade3d/metrics.hpp"
#include "cascade3d/networks.hpp"
#include "cascade3d/phantom.hpp"
#include "cascade3d/scale_plan.hpp"
#include "cascade3d/sketch.hpp"
#include "cascade3d/trainer.hpp"
#include "cascade3d/volume.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace cascade3d;

namespace {

struct Common {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;
};

void add_common(CLI::App* sub, Common& c, bool needs_out) {
  sub->add_option("--seed", c.seed, "random seed");
  sub->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  auto* o = sub->add_option("--out", c.out, "output directory");
  if (needs_out) o->required();
}

Shape3 parse_shape(const std::string& text) {
  std::vector<std::int64_t> dims;
  std::stringstream ss(text);
  for (std::string cell; std::getline(ss, cell, ',');) {
    try {
      std::size_t used = 0;
      dims.push_back(std::stoll(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw ValidationError("--shape: '" + text + "' is not z,y,x");
    }
  }
  if (dims.size() != 3) throw ValidationError("--shape: '" + text + "' is not z,y,x");
  for (auto d : dims)
    if (d < 1) throw ValidationError("--shape: dimensions must be positive");
  return {dims[0], dims[1], dims[2]};
}

fs::path out_dir(const Common& c) {
  fs::path p(c.out);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ValidationError(what + ": file not found: " + p.string());
}

// ---- phantom ---------------------------------------------------------------

struct PhantomArgs {
  Common c;
  std::int64_t side = 64;
  int count = 1;
  int blobs = 6;
  std::string domain = "pair";
  double lesion_radius = 0.0;
};

int run_phantom(const PhantomArgs& a) {
  if (a.count < 1) throw ValidationError("--count must be at least 1");
  if (a.domain != "pair") parse_phantom_domain(a.domain);
  const fs::path dir = out_dir(a.c);
  json items = json::array();
  for (int k = 0; k < a.count; ++k) {
    PhantomSpec spec;
    spec.seed = a.c.seed + static_cast<std::uint64_t>(k);
    spec.side = a.side;
    spec.n_blobs = a.blobs;
    if (a.lesion_radius > 0) {
      const double mid = (static_cast<double>(a.side) - 1.0) / 2.0;
      spec.lesion = Lesion{a.lesion_radius, {mid, mid, mid}};
    }
    const std::string stem = "phantom_" + std::to_string(spec.seed);
    json item;
    item["seed"] = spec.seed;
    std::optional<Phantom> last;
    const auto emit = [&](PhantomDomain d) {
      spec.domain = d;
      spec.validate();
      Phantom p = gen_phantom(spec);
      const std::string name = stem + "_" + to_string(d) + ".vol";
      save_volume(p.volume, dir / name);
      item[to_string(d)] = name;
      last = std::move(p);
    };
    if (a.domain == "pair") {
      emit(PhantomDomain::noisy);
      emit(PhantomDomain::smooth);
      item["source"] = item["noisy"];
      item["target"] = item["smooth"];
    } else {
      emit(parse_phantom_domain(a.domain));
      item["source"] = item[a.domain];
      item["target"] = item[a.domain];
    }
    if (spec.lesion) {
      save_volume(last->mask, dir / (stem + "_mask.vol"));
      item["mask"] = stem + "_mask.vol";
    }
    items.push_back(item);
  }
  PhantomSpec shown;
  shown.seed = a.c.seed;
  shown.side = a.side;
  shown.n_blobs = a.blobs;
  if (a.lesion_radius > 0) {
    const double mid = (static_cast<double>(a.side) - 1.0) / 2.0;
    shown.lesion = Lesion{a.lesion_radius, {mid, mid, mid}};
  }
  json manifest;
  manifest["kind"] = "phantoms";
  manifest["spec"] = to_json(shown);
  manifest["spec"].erase("domain");
  manifest["domain"] = a.domain;
  manifest["count"] = a.count;
  manifest["items"] = items;
  write_json(dir / "manifest.json", manifest);
  std::cout << "wrote " << a.count << " phantom item(s) to " << dir.string() << "\n";
  return 0;
}

// ---- sketch ----------------------------------------------------------------

struct SketchArgs {
  Common c;
  std::string in, mask, label_transform = "identity";
  CannyParams canny;
};

int run_sketch(const SketchArgs& a) {
  const LabelTransform t = parse_label_transform(a.label_transform);
  const Volume3 v = load_volume(a.in);
  Sketch s = canny3d(v, a.canny);
  if (!a.mask.empty()) s = overlay_labels(s, load_volume(a.mask), t);
  const fs::path dir = out_dir(a.c);
  save_volume(s.field, dir / "sketch.vol");
  json j;
  j["kind"] = "sketch";
  j["input"] = fs::path(a.in).filename().string();
  j["shape"] = {v.shape().nz, v.shape().ny, v.shape().nx};
  j["sigma"] = a.canny.sigma;
  j["lo_pct"] = a.canny.lo_pct;
  j["hi_pct"] = a.canny.hi_pct;
  j["label_transform"] = to_string(t);
  j["edge_voxels"] = count_edge_voxels(s);
  j["degenerate"] = s.degenerate;
  write_json(dir / "sketch.json", j);
  if (s.degenerate) std::cerr << "warning: no edges found, sketch is empty\n";
  std::cout << "edge voxels: " << count_edge_voxels(s) << "\n";
  return 0;
}

// ---- plan ------------------------------------------------------------------

struct PlanArgs {
  Common c;
  std::string shape;
  std::int64_t lr = 64, patch = 32, margin = 4;
  bool jobs = false;
};

int run_plan(const PlanArgs& a) {
  const ScalePlan plan = plan_scales(parse_shape(a.shape), a.lr, a.patch);
  const json j = plan_to_json(plan, a.margin, a.jobs);
  if (!a.c.out.empty()) write_json(out_dir(a.c) / "plan.json", j);
  std::cout << j.dump(2) << "\n";
  return 0;
}

// ---- train -----------------------------------------------------------------

struct DataItem {
  Volume3 source, target;
  std::optional<Volume3> mask;
};

std::vector<DataItem> load_dataset(const fs::path& manifest_path) {
  const json m = read_json(manifest_path);
  if (!m.contains("items") || !m["items"].is_array() || m["items"].empty())
    throw ValidationError(manifest_path.string() + ": expected a non-empty 'items' array");
  const fs::path base = manifest_path.parent_path();
  std::vector<DataItem> out;
  for (const auto& it : m["items"]) {
    if (!it.contains("source") || !it.contains("target"))
      throw ValidationError(manifest_path.string() + ": every item needs 'source' and 'target'");
    const fs::path src = base / it["source"].get<std::string>(), tgt = base / it["target"].get<std::string>();
    require_file(src, "dataset source");
    require_file(tgt, "dataset target");
    DataItem d{load_volume(src), load_volume(tgt), std::nullopt};
    if (it.contains("mask")) {
      const fs::path mk = base / it["mask"].get<std::string>();
      require_file(mk, "dataset mask");
      d.mask = load_volume(mk);
    }
    if (d.source.shape() != d.target.shape())
      throw ValidationError("source and target shapes differ: " + to_string(d.source.shape()) + " vs " +
                            to_string(d.target.shape()));
    if (!out.empty() && d.target.shape() != out.front().target.shape())
      throw ValidationError("all dataset volumes must share one shape");
    out.push_back(std::move(d));
  }
  return out;
}

struct TrainArgs {
  Common c;
  std::string data;
  int scale = 0, epochs = 1, steps = 4, width = 0, d_depth = 0;
  std::int64_t lr = 64, patch = 32;
  double lambda_l1 = 100.0, adam_lr = 2e-4;
  bool no_edges = false, no_prev = false;
};

int run_train(const TrainArgs& a) {
  const auto items = load_dataset(a.data);
  const ScalePlan plan = plan_scales(items.front().target.shape(), a.lr, a.patch);
  if (a.scale < 0 || a.scale > plan.n_scales)
    throw ValidationError("--scale " + std::to_string(a.scale) + " outside 0.." + std::to_string(plan.n_scales));

  TrainConfig cfg = TrainConfig::defaults(a.scale, a.c.seed);
  cfg.epochs = a.epochs;
  cfg.steps_per_volume = a.steps;
  cfg.lambda_l1 = a.lambda_l1;
  cfg.adam.lr = a.adam_lr;
  cfg.use_edges = !a.no_edges;
  cfg.use_prev_scale = !a.no_prev;
  if (a.width > 0) cfg.generator.base_channels = a.width;
  if (a.d_depth > 0) cfg.discriminator.depth = a.d_depth;
  else
    cfg.discriminator.depth = std::min(cfg.discriminator.depth,
                                       max_discriminator_depth(a.scale == 0 ? plan.lr_side : plan.patch_side));
  cfg.validate();

  std::vector<ScalePyramid> data;
  for (const auto& it : items)
    data.push_back(build_pyramid(it.target, it.source, plan, {}, it.mask ? &*it.mask : nullptr));

  const fs::path dir = out_dir(a.c);
  const std::string s = std::to_string(a.scale);
  const auto on_epoch = [&](int epoch, const nn::Network<float>& g, const nn::Network<float>& d) {
    json m{{"scale", a.scale}, {"lr_side", plan.lr_side}, {"patch_side", plan.patch_side}, {"epoch", epoch + 1},
           {"seed", a.c.seed}};
    const std::string tag = "_epoch" + std::to_string(epoch + 1) + ".ckpt";
    nn::save_checkpoint(g, dir / ("G" + s + tag), m);
    nn::save_checkpoint(d, dir / ("D" + s + tag), m);
    std::cerr << "scale " << a.scale << " epoch " << epoch + 1 << "/" << a.epochs << "\n";
  };
  std::optional<TrainResult> trained;
  try {
    trained.emplace(train_scale(data, plan, cfg, on_epoch));
  } catch (const TrainingDiverged& e) {
    write_loss_csv(e.history(), dir / ("loss_" + std::to_string(a.scale) + ".csv"));
    throw;
  }
  const TrainResult& r = *trained;
  json meta;
  meta["scale"] = a.scale;
  meta["lr_side"] = plan.lr_side;
  meta["patch_side"] = plan.patch_side;
  meta["epochs"] = a.epochs;
  meta["steps"] = r.log.size();
  meta["seed"] = a.c.seed;
  meta["use_edges"] = cfg.use_edges;
  meta["use_prev_scale"] = cfg.use_prev_scale;
  nn::save_checkpoint(r.generator, dir / ("G" + s + ".ckpt"), meta);
  nn::save_checkpoint(r.discriminator, dir / ("D" + s + ".ckpt"), meta);
  write_loss_csv(r.log, dir / ("loss_" + s + ".csv"));
  json j;
  j["kind"] = "training";
  j["scale"] = a.scale;
  j["plan"] = plan_to_json(plan, nn::valid_margin(cfg.generator), false);
  j["generator"] = r.generator.architecture();
  j["discriminator"] = r.discriminator.architecture();
  j["meta"] = meta;
  j["lambda_l1"] = cfg.lambda_l1;
  j["adam_lr"] = cfg.adam.lr;
  j["final_loss"] = {{"loss_D", r.log.back().loss_d},
                     {"loss_G_adv", r.log.back().loss_g_adv},
                     {"loss_G_L1", r.log.back().loss_g_l1}};
  write_json(dir / ("train_" + s + ".json"), j);
  std::cout << "trained scale " << a.scale << " for " << r.log.size() << " steps\n";
  return 0;
}

// ---- infer -----------------------------------------------------------------

struct InferArgs {
  Common c;
  std::string in, ckpt, mask, label_transform = "identity";
  std::int64_t lr = 0, patch = 0, margin = -1;
  bool no_edges = false, no_prev = false, save_scales = false;
};

int run_infer(const InferArgs& a) {
  const fs::path ck(a.ckpt);
  if (!fs::is_directory(ck)) throw ValidationError("--ckpt: directory not found: " + ck.string());
  const Volume3 input = load_volume(a.in);
  require_file(ck / "G0.ckpt", "--ckpt");
  const nn::Checkpoint c0 = nn::load_checkpoint(ck / "G0.ckpt");
  std::int64_t lr = a.lr > 0 ? a.lr : c0.meta.value("lr_side", std::int64_t{64});
  std::int64_t patch = a.patch > 0 ? a.patch : c0.meta.value("patch_side", std::int64_t{32});
  const ScalePlan plan = plan_scales(input.shape(), lr, patch);

  std::vector<nn::Network<float>> gens;
  gens.push_back(nn::network_from_checkpoint<float>(c0));
  for (int i = 1; i <= plan.n_scales; ++i) {
    const fs::path p = ck / ("G" + std::to_string(i) + ".ckpt");
    require_file(p, "--ckpt (scale " + std::to_string(i) + ")");
    gens.push_back(nn::network_from_checkpoint<float>(nn::load_checkpoint(p)));
  }
  CascadeOptions opt;
  opt.valid_margin = a.margin >= 0 ? a.margin : (plan.n_scales > 0 ? nn::valid_margin(gens[1].config()) : 0);
  opt.use_edges = !a.no_edges;
  opt.use_prev_scale = !a.no_prev;

  std::optional<Volume3> mask;
  if (!a.mask.empty()) mask = load_volume(a.mask);
  SketchOptions so;
  so.label_transform = parse_label_transform(a.label_transform);
  const auto sketches = build_sketch_pyramid(input, plan, so, mask ? &*mask : nullptr);

  NetworkCascade cascade(std::move(gens));
  const CascadeResult res = infer_cascade(sketches, cascade, plan, opt);

  const fs::path dir = out_dir(a.c);
  save_volume(res.output, dir / "output.vol");
  if (a.save_scales)
    for (std::size_t i = 0; i < res.scales.size(); ++i)
      save_volume(res.scales[i], dir / ("scale_" + std::to_string(i) + ".vol"));
  json j;
  j["kind"] = "inference";
  j["input"] = fs::path(a.in).filename().string();
  j["plan"] = plan_to_json(plan, opt.valid_margin, false);
  j["use_edges"] = opt.use_edges;
  j["use_prev_scale"] = opt.use_prev_scale;
  json stats = json::array();
  for (const auto& s : res.stats)
    stats.push_back({{"scale", s.scale},
                     {"jobs", s.jobs},
                     {"patch_workspace_peak", s.patch_workspace_peak},
                     {"scale_peak", s.scale_peak}});
  j["scales"] = stats;
  write_json(dir / "infer.json", j);
  std::cout << "wrote " << (dir / "output.vol").string() << "\n";
  return 0;
}

// ---- metrics ---------------------------------------------------------------

struct MetricsArgs {
  Common c;
  std::vector<std::string> pred, ref, baseline;
};

int run_metrics(const MetricsArgs& a) {
  if (a.pred.size() != a.ref.size())
    throw ValidationError("--pred and --ref need the same number of volumes (" + std::to_string(a.pred.size()) +
                          " vs " + std::to_string(a.ref.size()) + ")");
  if (!a.baseline.empty() && a.baseline.size() != a.pred.size())
    throw ValidationError("--baseline needs one volume per --pred");
  std::ostringstream csv;
  csv << "ssim,mae,mse,psnr\n";
  std::vector<double> ssim_pred, ssim_base;
  csv.precision(10);
  for (std::size_t i = 0; i < a.pred.size(); ++i) {
    const Volume3 p = load_volume(a.pred[i]), r = load_volume(a.ref[i]);
    const QualityRow q = quality(p, r);
    csv << q.ssim << ',' << q.mae << ',' << q.mse << ',' << q.psnr << '\n';
    ssim_pred.push_back(q.ssim);
    if (!a.baseline.empty()) ssim_base.push_back(ssim3d(load_volume(a.baseline[i]), r));
  }
  std::string text = csv.str();
  if (!a.c.out.empty()) write_text(out_dir(a.c) / "metrics.csv", text);
  std::cout << text;
  if (!ssim_base.empty()) {
    const TTestResult t = paired_ttest(ssim_pred, ssim_base);
    json j{{"t", t.t}, {"p", t.p}, {"df", t.df}};
    if (!a.c.out.empty()) write_json(out_dir(a.c) / "ttest.json", j);
    std::cout << "paired t-test on SSIM: t=" << t.t << " p=" << t.p << " df=" << t.df << "\n";
  }
  return 0;
}

// ---- memory ----------------------------------------------------------------

struct MemArgs {
  Common c;
  std::vector<std::string> arch;
  std::vector<std::int64_t> side;
  bool layers = false;
};

int run_estimate_mem(const MemArgs& a) {
  const bool all_arch = a.arch.empty();
  const auto archs = all_arch ? memory_architectures() : a.arch;
  const std::vector<std::int64_t> sides = a.side.empty() ? std::vector<std::int64_t>{32, 64, 128, 256, 512} : a.side;
  std::vector<MemoryReport> reports;
  for (const auto& ar : archs)
    for (auto s : sides) {
      // Default sweep skips sides the cascade stages do not accept.
      if (all_arch && a.side.empty() && (ar == "lr64" || ar == "hr32") && s < 64) continue;
      reports.push_back(estimate_memory(ar, s));
    }
  const std::string text = memory_csv(reports);
  std::cout << text;
  if (!a.c.out.empty()) {
    const fs::path dir = out_dir(a.c);
    write_text(dir / "memory.csv", text);
    if (a.layers) {
      std::ostringstream os;
      os << "arch,side,net,layer,kind,channels,size,activation_bytes,params\n";
      for (const auto& r : reports)
        for (const auto& row : r.rows)
          os << r.arch << ',' << r.side << ',' << row.net << ',' << row.name << ',' << row.kind << ','
             << row.output[1] << ',' << row.output[2] << ',' << row.activation_bytes << ',' << row.params << '\n';
      write_text(dir / "memory_layers.csv", os.str());
    }
    std::map<std::string, std::vector<MemoryReport>> by;
    for (const auto& r : reports) by[r.arch].push_back(r);
    json fits = json::object();
    for (const auto& [ar, rs] : by)
      if (rs.size() >= 3) fits[ar] = fit_growth(rs).at(ar);
    write_json(dir / "growth.json", fits);
  }
  return 0;
}

struct PlotArgs {
  Common c;
  std::string csv;
};

int run_plot_mem(const PlotArgs& a) {
  const auto reports = read_memory_csv(a.csv);
  const fs::path dir = out_dir(a.c);
  write_text(dir / "memory.svg", memory_svg(reports));
  std::cout << "wrote " << (dir / "memory.svg").string() << "\n";
  return 0;
}

// ---- gradcheck -------------------------------------------------------------

struct GradArgs {
  Common c;
  int seeds = 1;
  bool no_networks = false;
  double tol = 1e-4;
};

int run_gradcheck(const GradArgs& a) {
  if (a.seeds < 1) throw ValidationError("--seeds must be at least 1");
  std::ostringstream csv;
  csv << "seed,check,max_rel_error,entries,kink_retries,passed\n";
  bool ok = true;
  for (int k = 0; k < a.seeds; ++k) {
    const std::uint64_t seed = a.c.seed + static_cast<std::uint64_t>(k);
    for (const auto& r : nn::run_gradcheck_suite(seed, !a.no_networks)) {
      const bool pass = r.passed(a.tol);
      ok = ok && pass;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3e", r.max_rel_error);
      csv << seed << ',' << r.name << ',' << buf << ',' << r.entries << ',' << r.kink_retries << ','
          << (pass ? "yes" : "no") << '\n';
    }
  }
  if (!a.c.out.empty()) write_text(out_dir(a.c) / "gradcheck.csv", csv.str());
  std::cout << csv.str();
  if (!ok) {
    std::cerr << "gradient check failed\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cascade3d: multi-scale patch-cascade GAN for 3D volumes"};
  app.require_subcommand(1);

  PhantomArgs ph;
  auto* s_ph = app.add_subcommand("phantom", "generate synthetic phantom volumes");
  add_common(s_ph, ph.c, true);
  s_ph->add_option("--side", ph.side, "cube side");
  s_ph->add_option("--count", ph.count, "number of phantoms (seeds seed..seed+count-1)");
  s_ph->add_option("--blobs", ph.blobs, "ellipsoids per phantom");
  s_ph->add_option("--domain", ph.domain, "smooth, noisy or pair")->check(CLI::IsMember({"smooth", "noisy", "pair"}));
  s_ph->add_option("--lesion-radius", ph.lesion_radius, "central lesion radius in voxels (0: none)");

  SketchArgs sk;
  auto* s_sk = app.add_subcommand("sketch", "extract an edge sketch");
  add_common(s_sk, sk.c, true);
  s_sk->add_option("--in", sk.in, "input VOL1 file")->required()->check(CLI::ExistingFile);
  s_sk->add_option("--mask", sk.mask, "label mask VOL1 file")->check(CLI::ExistingFile);
  s_sk->add_option("--label-transform", sk.label_transform, "identity, mirror-y, scale-0.85, scale-1.15");
  s_sk->add_option("--sigma", sk.canny.sigma, "gradient smoothing sigma");
  s_sk->add_option("--lo-pct", sk.canny.lo_pct, "low hysteresis percentile");
  s_sk->add_option("--hi-pct", sk.canny.hi_pct, "high hysteresis percentile");

  PlanArgs pl;
  auto* s_pl = app.add_subcommand("plan", "print the scale ladder and patch grid");
  add_common(s_pl, pl.c, false);
  s_pl->add_option("--shape", pl.shape, "z,y,x")->required();
  s_pl->add_option("--lr", pl.lr, "LR side");
  s_pl->add_option("--patch", pl.patch, "patch side");
  s_pl->add_option("--margin", pl.margin, "valid margin");
  s_pl->add_flag("--jobs", pl.jobs, "list every patch job");

  TrainArgs tr;
  auto* s_tr = app.add_subcommand("train", "train one scale");
  add_common(s_tr, tr.c, true);
  s_tr->add_option("--data", tr.data, "dataset manifest (JSON)")->required()->check(CLI::ExistingFile);
  s_tr->add_option("--scale", tr.scale, "scale index");
  s_tr->add_option("--epochs", tr.epochs, "epochs");
  s_tr->add_option("--steps", tr.steps, "samples per volume per epoch");
  s_tr->add_option("--lr", tr.lr, "LR side");
  s_tr->add_option("--patch", tr.patch, "patch side");
  s_tr->add_option("--lambda-l1", tr.lambda_l1, "L1 weight");
  s_tr->add_option("--adam-lr", tr.adam_lr, "Adam step size");
  s_tr->add_option("--width", tr.width, "generator base channels (0: default)");
  s_tr->add_option("--d-depth", tr.d_depth, "discriminator blocks (0: default, capped by the input side)");
  s_tr->add_flag("--no-edges", tr.no_edges, "zero the sketch input");
  s_tr->add_flag("--no-prev-scale", tr.no_prev, "zero the previous-scale input");

  InferArgs in;
  auto* s_in = app.add_subcommand("infer", "run the cascade on a volume");
  add_common(s_in, in.c, true);
  s_in->add_option("--in", in.in, "input VOL1 file")->required()->check(CLI::ExistingFile);
  s_in->add_option("--ckpt", in.ckpt, "directory with G0.ckpt .. Gn.ckpt")->required()->check(CLI::ExistingDirectory);
  s_in->add_option("--mask", in.mask, "label mask VOL1 file")->check(CLI::ExistingFile);
  s_in->add_option("--label-transform", in.label_transform, "identity, mirror-y, scale-0.85, scale-1.15");
  s_in->add_option("--lr", in.lr, "LR side (default: from checkpoint)");
  s_in->add_option("--patch", in.patch, "patch side (default: from checkpoint)");
  s_in->add_option("--margin", in.margin, "valid margin (default: from the HR generator)");
  s_in->add_flag("--no-edges", in.no_edges, "zero the sketch input");
  s_in->add_flag("--no-prev-scale", in.no_prev, "zero the previous-scale input");
  s_in->add_flag("--save-scales", in.save_scales, "also write every working scale");

  MetricsArgs me;
  auto* s_me = app.add_subcommand("metrics", "SSIM/PSNR/MAE/MSE and paired t-test");
  add_common(s_me, me.c, false);
  s_me->add_option("--pred", me.pred, "result volumes")->required()->check(CLI::ExistingFile);
  s_me->add_option("--ref", me.ref, "reference volumes")->required()->check(CLI::ExistingFile);
  s_me->add_option("--baseline", me.baseline, "volumes compared against --pred by paired t-test on SSIM")
      ->check(CLI::ExistingFile);

  MemArgs mm;
  auto* s_mm = app.add_subcommand("estimate-mem", "analytic training memory");
  add_common(s_mm, mm.c, false);
  s_mm->add_option("--arch", mm.arch, "dcgan3d, pix2pix3d, pggan3d, lr64, hr32")->delimiter(',');
  s_mm->add_option("--side", mm.side, "image sides")->delimiter(',');
  s_mm->add_flag("--layers", mm.layers, "also write the per-layer breakdown");

  PlotArgs pm;
  auto* s_pm = app.add_subcommand("plot-mem", "SVG chart from an estimate-mem CSV");
  add_common(s_pm, pm.c, true);
  s_pm->add_option("--csv", pm.csv, "memory CSV")->required()->check(CLI::ExistingFile);

  GradArgs gc;
  auto* s_gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(s_gc, gc.c, false);
  s_gc->add_option("--seeds", gc.seeds, "number of consecutive seeds");
  s_gc->add_flag("--no-networks", gc.no_networks, "skip the network checks");
  s_gc->add_option("--tol", gc.tol, "relative error tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  const auto threads = [&](const Common& c) { omp_set_num_threads(c.threads); };
  try {
    if (s_ph->parsed()) return threads(ph.c), run_phantom(ph);
    if (s_sk->parsed()) return threads(sk.c), run_sketch(sk);
    if (s_pl->parsed()) return threads(pl.c), run_plan(pl);
    if (s_tr->parsed()) return threads(tr.c), run_train(tr);
    if (s_in->parsed()) return threads(in.c), run_infer(in);
    if (s_me->parsed()) return threads(me.c), run_metrics(me);
    if (s_mm->parsed()) return threads(mm.c), run_estimate_mem(mm);
    if (s_pm->parsed()) return threads(pm.c), run_plot_mem(pm);
    if (s_gc->parsed()) return threads(gc.c), run_gradcheck(gc);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
