// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only N,...] [--allow-fail N,...]
//
// Exit status is nonzero when a criterion not listed in --allow-fail fails.

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "cascade3d/gradcheck.hpp"
#include "cascade3d/memory_model.hpp"
#include "cascade3d/metrics.hpp"
#include "cascade3d/phantom.hpp"
#include "cascade3d/scale_plan.hpp"
#include "cascade3d/trainer.hpp"

namespace fs = std::filesystem;
using namespace cascade3d;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CASCADE3D_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cascade3d_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Volume3 random_volume(Shape3 s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Volume3 v(s);
  for (float& x : v.voxels()) x = u(rng);
  return v;
}

double max_abs_diff(const Volume3& a, const Volume3& b) {
  double m = 0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(double(a.voxels()[i]) - double(b.voxels()[i])));
  return m;
}

std::vector<Volume3> random_sketches(const ScalePlan& plan, std::uint64_t seed) {
  std::vector<Volume3> s{random_volume(plan.lr_sketch_shape(), seed)};
  for (int i = 1; i <= plan.n_scales; ++i) s.push_back(random_volume(plan.working_shape_at(i), seed + i));
  return s;
}

// 1. Memory constancy.
Outcome memory_constancy() {
  const fs::path d = fresh_dir("c1");
  if (run_cli("estimate-mem --arch lr64,hr32 --side 128,256,512 --out " + d.string()) != 0)
    return {false, "estimate-mem failed"};
  std::map<std::string, std::set<std::int64_t>> totals;
  for (const auto& r : read_memory_csv(d / "memory.csv")) totals[r.arch].insert(r.total);
  const bool analytic = totals.size() == 2 && totals["lr64"].size() == 1 && totals["hr32"].size() == 1;

  std::vector<std::vector<std::int64_t>> peaks;
  for (std::int64_t side : {128, 256}) {
    const ScalePlan plan = plan_scales(Shape3::cube(side), 64, 32);
    std::vector<nn::Network<float>> gens;
    nn::NetConfig lr = nn::NetConfig::lr_unet(1);
    lr.base_channels = 4;
    gens.emplace_back(lr);
    nn::NetConfig hr_cfg = nn::NetConfig::hr_resnet(1, 2);
    hr_cfg.base_channels = 4;
    hr_cfg.n_res_blocks = 2;
    for (int i = 1; i <= plan.n_scales; ++i) {
      hr_cfg.scale = i;
      gens.emplace_back(hr_cfg);
    }
    NetworkCascade cascade(std::move(gens));
    const CascadeResult r = infer_cascade(random_sketches(plan, 5), cascade, plan, {nn::valid_margin(hr_cfg)});
    std::vector<std::int64_t> p;
    for (const auto& s : r.stats)
      if (s.scale >= 1) p.push_back(s.patch_workspace_peak);
    peaks.push_back(p);
  }
  std::set<std::int64_t> all;
  for (const auto& p : peaks) all.insert(p.begin(), p.end());
  const bool measured = all.size() == 1 && *all.begin() > 0;
  return {analytic && measured,
          fmt("lr64 totals %s, hr32 totals %s across 128/256/512; patch workspace peaks %s (%lld bytes)",
              totals["lr64"].size() == 1 ? "identical" : "differ", totals["hr32"].size() == 1 ? "identical" : "differ",
              measured ? "identical at 128 and 256" : "differ", static_cast<long long>(all.empty() ? 0 : *all.begin()))};
}

// 2. Cubic baseline growth and the 100 GB anchor.
Outcome cubic_growth() {
  const fs::path d = fresh_dir("c2");
  if (run_cli("estimate-mem --arch dcgan3d,pix2pix3d,pggan3d --side 32,64,128,256 --out " + d.string()) != 0)
    return {false, "estimate-mem failed"};
  std::vector<MemoryReport> fit_rows;
  std::int64_t pggan256 = 0;
  for (const auto& r : read_memory_csv(d / "memory.csv")) {
    if (r.side <= 128) fit_rows.push_back(r);
    if (r.arch == "pggan3d" && r.side == 256) pggan256 = r.total;
  }
  const auto g = fit_growth(fit_rows);
  bool cubic = true;
  std::string exps;
  for (const auto& [arch, e] : g) {
    cubic = cubic && e >= 2.9;
    exps += fmt("%s %.2f ", arch.c_str(), e);
  }
  const bool anchor = pggan256 > 100'000'000'000LL;
  return {cubic && anchor, fmt("exponents over 32-128: %s(need >= 2.9); pggan3d at 256: %.1f GB (need > 100)",
                               exps.c_str(), pggan256 / 1e9)};
}

// 3. Gradient correctness over 5 seeds.
Outcome gradients() {
  double worst = 0;
  std::string worst_name;
  int checks = 0, failed = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (const auto& r : nn::run_gradcheck_suite(seed, true)) {
      ++checks;
      if (!r.passed(1e-4)) ++failed;
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        worst_name = r.name;
      }
    }
  return {failed == 0, fmt("%d checks, %d failed, worst %.2e (%s)", checks, failed, worst, worst_name.c_str())};
}

// 4. Identity cascade and paste-region partition.
Outcome identity_cascade() {
  double worst = 0;
  bool partition = true;
  for (Shape3 shape : {Shape3::cube(64), Shape3::cube(128), Shape3{155, 240, 240}})
    for (std::int64_t margin : {0, 4}) {
      const ScalePlan plan = plan_scales(shape, 64, 32);
      for (int i = 1; i <= plan.n_scales; ++i) {
        const Shape3 s = plan.working_shape_at(i);
        std::vector<std::uint8_t> owners(static_cast<std::size_t>(s.voxels()), 0);
        std::int64_t total = 0;
        for (const auto& j : patch_grid(plan, i, margin)) {
          const Box3& b = j.paste_region;
          total += b.voxels();
          for (std::int64_t z = b.lo[0]; z < b.hi(0); ++z)
            for (std::int64_t y = b.lo[1]; y < b.hi(1); ++y)
              for (std::int64_t x = b.lo[2]; x < b.hi(2); ++x) {
                auto& o = owners[static_cast<std::size_t>((z * s.ny + y) * s.nx + x)];
                if (o) partition = false;
                o = 1;
              }
        }
        partition = partition && total == s.voxels() &&
                    std::all_of(owners.begin(), owners.end(), [](std::uint8_t o) { return o == 1; });
      }
      const Volume3 lr = random_volume(plan.working_shape_at(0), 9);
      IdentityCascade gen(lr);
      std::vector<Volume3> sketches{Volume3(plan.lr_sketch_shape())};
      for (int i = 1; i <= plan.n_scales; ++i) sketches.emplace_back(plan.working_shape_at(i));
      const CascadeResult r = infer_cascade(sketches, gen, plan, {margin});
      // Reference: one trilinear doubling per scale, then the crop.
      Volume3 ref = lr;
      for (int i = 1; i <= plan.n_scales; ++i) ref = resample_trilinear(ref, plan.working_shape_at(i));
      worst = std::max(worst, max_abs_diff(r.output, extract_patch(ref, plan.crop_box())));
    }
  return {worst < 1e-6 && partition,
          fmt("max |cascade - trilinear| = %.2e over 3 shapes x margins {0,4}; paste regions %s", worst,
              partition ? "partition every scale" : "do NOT partition")};
}

// 5-7 share one training run.
struct TranslationRun {
  std::vector<double> ssim_src, ssim_out, ssim_no_edges, ssim_no_prev, mae_src, mae_out, seam_ours, seam_naive;
  double train_seconds = 0, infer_seconds = 0;
};

const TranslationRun& translation_run() {
  static const TranslationRun run = [] {
    TranslationRun r;
    const auto t0 = std::chrono::steady_clock::now();
    const ScalePlan plan = plan_scales(Shape3::cube(64), 32, 16);
    std::vector<ScalePyramid> train;
    std::vector<std::pair<Volume3, Volume3>> test;
    for (int i = 0; i < 25; ++i) {
      PhantomSpec s;
      s.seed = 1000 + static_cast<std::uint64_t>(i);
      s.side = 64;
      s.domain = PhantomDomain::noisy;
      const Phantom src = gen_phantom(s);
      s.domain = PhantomDomain::smooth;
      const Phantom tgt = gen_phantom(s);
      if (i < 20) train.push_back(build_pyramid(tgt.volume, src.volume, plan));
      else test.emplace_back(src.volume, tgt.volume);
    }
    TrainConfig c0 = TrainConfig::defaults(0, 1);
    c0.epochs = 10;
    c0.steps_per_volume = 1;
    TrainConfig c1 = TrainConfig::defaults(1, 1);
    c1.epochs = 8;
    c1.steps_per_volume = 4;
    c1.generator.base_channels = 16;
    c1.discriminator.depth = 3;
    const TrainResult r0 = train_scale(train, plan, c0);
    const TrainResult r1 = train_scale(train, plan, c1);
    r.train_seconds = seconds_since(t0);

    const auto t1 = std::chrono::steady_clock::now();
    NetworkCascade cascade({r0.generator, r1.generator});
    const std::int64_t margin = nn::valid_margin(c1.generator);
    for (const auto& [src, tgt] : test) {
      const auto sk = build_sketch_pyramid(src, plan);
      const CascadeResult dual = infer_cascade(sk, cascade, plan, {margin, true, true});
      const CascadeResult naive = infer_cascade(sk, cascade, plan, {0, true, false});
      const CascadeResult no_edges = infer_cascade(sk, cascade, plan, {margin, false, true});
      const CascadeResult no_prev = infer_cascade(sk, cascade, plan, {margin, true, false});
      r.ssim_src.push_back(ssim3d(src, tgt));
      r.ssim_out.push_back(ssim3d(dual.output, tgt));
      r.ssim_no_edges.push_back(ssim3d(no_edges.output, tgt));
      r.ssim_no_prev.push_back(ssim3d(no_prev.output, tgt));
      r.mae_src.push_back(mae(src, tgt));
      r.mae_out.push_back(mae(dual.output, tgt));
      r.seam_ours.push_back(seam_statistics(dual.output, dual.jobs[1]).ratio());
      r.seam_naive.push_back(seam_statistics(naive.output, naive.jobs[1]).ratio());
    }
    r.infer_seconds = seconds_since(t1);
    return r;
  }();
  return run;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

Outcome translation() {
  const auto& r = translation_run();
  const double s_src = mean_of(r.ssim_src), s_out = mean_of(r.ssim_out);
  const double m_src = mean_of(r.mae_src), m_out = mean_of(r.mae_out);
  return {s_out >= s_src + 0.05 && m_out <= m_src,
          fmt("SSIM translated %.3f vs source %.3f (need +0.05); MAE %.4f vs %.4f; train %.0fs, inference %.0fs", s_out,
              s_src, m_out, m_src, r.train_seconds, r.infer_seconds)};
}

Outcome seams() {
  const auto& r = translation_run();
  const double ours = mean_of(r.seam_ours), naive = mean_of(r.seam_naive);
  return {ours <= 0.5 * naive, fmt("seam/interior jump ratio %.3f vs naive patches %.3f (ratio %.2f, need <= 0.5)", ours,
                                   naive, ours / naive)};
}

Outcome ablations() {
  const auto& r = translation_run();
  const double full = mean_of(r.ssim_out), ne = mean_of(r.ssim_no_edges), np = mean_of(r.ssim_no_prev);
  return {ne < full && np < full, fmt("SSIM dual %.3f, no edges %.3f, no previous scale %.3f", full, ne, np)};
}

// 8. Metrics against independent oracles.
Outcome metrics_oracles() {
  double worst = 0;
  const double c1 = 1e-4, c2 = 9e-4;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const Volume3 a = random_volume(Shape3::cube(16), 500 + i);
    Volume3 b = random_volume(Shape3::cube(16), 600 + i);
    for (std::int64_t k = 0; k < b.size(); ++k) b.voxels()[k] = 0.5f * a.voxels()[k] + 0.5f * b.voxels()[k];
    double acc = 0;
    std::int64_t windows = 0;
    for (std::int64_t z = 0; z + 7 <= 16; ++z)
      for (std::int64_t y = 0; y + 7 <= 16; ++y)
        for (std::int64_t x = 0; x + 7 <= 16; ++x) {
          double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
          for (int p = 0; p < 7; ++p)
            for (int q = 0; q < 7; ++q)
              for (int w = 0; w < 7; ++w) {
                const double u = a(z + p, y + q, x + w), v = b(z + p, y + q, x + w);
                sa += u;
                sb += v;
                saa += u * u;
                sbb += v * v;
                sab += u * v;
              }
          const double n = 343, ma = sa / n, mb = sb / n;
          const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cab = sab / n - ma * mb;
          acc += ((2 * ma * mb + c1) * (2 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
          ++windows;
        }
    double se = 0, ae = 0;
    for (std::int64_t k = 0; k < a.size(); ++k) {
      const double d = double(a.voxels()[k]) - double(b.voxels()[k]);
      se += d * d;
      ae += std::abs(d);
    }
    se /= static_cast<double>(a.size());
    ae /= static_cast<double>(a.size());
    worst = std::max({worst, std::abs(ssim3d(a, b) - acc / static_cast<double>(windows)), std::abs(mse(a, b) - se),
                      std::abs(mae(a, b) - ae), std::abs(psnr(a, b) - 10 * std::log10(1 / se))});
  }
  const std::vector<std::pair<std::vector<double>, std::vector<double>>> sets{
      {{0.773, 0.751, 0.802, 0.768, 0.790, 0.745, 0.781, 0.759, 0.795, 0.770},
       {0.480, 0.512, 0.466, 0.503, 0.491, 0.470, 0.525, 0.488, 0.474, 0.499}},
      {{1.2, 0.7, 1.9, 1.1, 0.4, 1.6, 0.9, 1.3, 1.0, 0.8}, {1.0, 0.9, 1.5, 1.2, 0.5, 1.2, 0.95, 1.1, 1.05, 0.6}},
  };
  double t_worst = 0;
  for (const auto& [xs, ys] : sets) {
    const double n = static_cast<double>(xs.size());
    double m = 0, v = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) m += xs[i] - ys[i];
    m /= n;
    for (std::size_t i = 0; i < xs.size(); ++i) v += (xs[i] - ys[i] - m) * (xs[i] - ys[i] - m);
    const double t = m / std::sqrt(v / (n - 1) / n);
    const double p = 2 * boost::math::cdf(boost::math::complement(boost::math::students_t(n - 1), std::abs(t)));
    const TTestResult r = paired_ttest(xs, ys);
    t_worst = std::max({t_worst, std::abs(r.t - t), std::abs(r.p - p)});
  }
  return {worst < 1e-6 && t_worst < 1e-6,
          fmt("20 random 16^3 pairs: max deviation %.2e; t-test vs Boost: %.2e", worst, t_worst)};
}

// 9. Replayability of every subcommand at one thread.
Outcome determinism() {
  const fs::path work = fresh_dir("c9");
  const fs::path first = fresh_dir("c9_first");
  const std::string w = work.string();
  const std::vector<std::string> commands{
      "phantom --side 64 --count 2 --lesion-radius 5 --out " + w + "/data",
      "sketch --in " + w + "/data/phantom_7_noisy.vol --mask " + w + "/data/phantom_7_mask.vol --out " + w + "/sketch",
      "plan --shape 155,240,240 --lr 64 --patch 32 --margin 4 --out " + w + "/plan",
      "train --data " + w + "/data/manifest.json --scale 0 --epochs 1 --steps 1 --lr 32 --patch 16 --width 4 --out " +
          w + "/ckpt",
      "train --data " + w + "/data/manifest.json --scale 1 --epochs 1 --steps 2 --lr 32 --patch 16 --width 4 " +
          "--d-depth 3 --out " + w + "/ckpt",
      "infer --in " + w + "/data/phantom_8_noisy.vol --ckpt " + w + "/ckpt --save-scales --out " + w + "/infer",
      "metrics --pred " + w + "/infer/output.vol --ref " + w + "/data/phantom_8_smooth.vol --out " + w + "/metrics",
      "estimate-mem --out " + w + "/mem",
      "plot-mem --csv " + w + "/mem/memory.csv --out " + w + "/plot",
      "gradcheck --seeds 1 --out " + w + "/gradcheck",
  };
  for (int pass = 0; pass < 2; ++pass) {
    fs::remove_all(work);
    fs::create_directories(work);
    for (const auto& c : commands)
      if (int code = run_cli(c + " --seed 7 --threads 1"); code != 0)
        return {false, "command failed with exit " + std::to_string(code) + ": " + c.substr(0, c.find(' '))};
    if (pass == 0) {
      fs::remove_all(first);
      fs::rename(work, first);
    }
  }
  std::int64_t files = 0;
  std::vector<std::string> differ;
  for (const auto& e : fs::recursive_directory_iterator(first)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path other = work / fs::relative(e.path(), first);
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) differ.push_back(fs::relative(e.path(), first).string());
  }
  std::int64_t second_files = 0;
  for (const auto& e : fs::recursive_directory_iterator(work)) second_files += e.is_regular_file();
  const bool ok = differ.empty() && files == second_files && files > 0;
  return {ok, fmt("%lld files from %zu subcommand runs, %zu differ%s%s", static_cast<long long>(files), commands.size(),
                  differ.size(), differ.empty() ? "" : ", first: ", differ.empty() ? "" : differ.front().c_str())};
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, allow;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--only") only = parse_list(argv[i + 1]);
    else if (flag == "--allow-fail") allow = parse_list(argv[i + 1]);
    else {
      std::fprintf(stderr, "unknown flag %s\n", flag.c_str());
      return 2;
    }
  }
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"memory constancy", memory_constancy}, {"cubic baseline growth", cubic_growth},
      {"gradient correctness", gradients},    {"identity cascade and partition", identity_cascade},
      {"domain translation", translation},    {"seam suppression", seams},
      {"ablation direction", ablations},      {"metrics oracles", metrics_oracles},
      {"determinism", determinism},
  };
  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool tolerated = !o.pass && allow.count(id);
    if (!o.pass && !tolerated) ++unexpected;
    std::printf("criterion %d [%s] %s: %s (%.1fs)%s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first,
                o.detail.c_str(), seconds_since(t0), tolerated ? " [known failure]" : "");
    std::fflush(stdout);
  }
  return unexpected == 0 ? 0 : 1;
}
