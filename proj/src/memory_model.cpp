#include "cascade3d/memory_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cascade3d/errors.hpp"

namespace cascade3d {

namespace {

bool power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

int log2_exact(std::int64_t v) {
  int l = 0;
  while ((std::int64_t{1} << l) < v) ++l;
  return l;
}

// Symbolic forward walk over a single feature map [1, c, s, s, s].
class Builder {
 public:
  Builder(std::vector<nn::LayerSummary>& out, std::int64_t c, std::int64_t s) : out_(out), c_(c), s_(s) {}

  std::int64_t channels() const { return c_; }
  std::int64_t side() const { return s_; }

  void conv(const std::string& name, std::int64_t cout, std::int64_t k, std::int64_t stride, std::int64_t pad) {
    const std::int64_t params = c_ * cout * k * k * k + cout;
    s_ = (s_ + 2 * pad - k) / stride + 1;
    if (s_ < 1) throw std::logic_error("symbolic layer collapsed: " + name);
    c_ = cout;
    emit(name, "conv3d", params);
  }
  void tconv(const std::string& name, std::int64_t cout, std::int64_t k, std::int64_t stride, std::int64_t pad) {
    const std::int64_t params = c_ * cout * k * k * k + cout;
    s_ = (s_ - 1) * stride - 2 * pad + k;
    c_ = cout;
    emit(name, "conv3d_transpose", params);
  }
  void norm(const std::string& name, const std::string& kind) { emit(name, kind, kind == "pixel_norm" ? 0 : 2 * c_); }
  void act(const std::string& name, const std::string& kind) { emit(name, kind, 0); }
  void upsample(const std::string& name) {
    s_ *= 2;
    emit(name, "upsample_nearest", 0);
  }
  void pool(const std::string& name) {
    s_ /= 2;
    emit(name, "avg_pool", 0);
  }
  void concat(const std::string& name, std::int64_t extra) {
    c_ += extra;
    emit(name, "concat", 0);
  }

 private:
  void emit(const std::string& name, const std::string& kind, std::int64_t params) {
    out_.push_back({name, kind, {1, c_, s_, s_, s_}, params});
  }

  std::vector<nn::LayerSummary>& out_;
  std::int64_t c_, s_;
};

constexpr std::int64_t kDcganLatent = 200;
constexpr std::int64_t kPgganLatent = 512;

// Transpose-conv ladder from a 4^3 seed; the layer just below the output
// carries 64 channels and widths double towards the seed up to 512.
ArchLayers dcgan3d(std::int64_t s) {
  ArchLayers a;
  const auto width = [s](std::int64_t r) { return std::min<std::int64_t>(512, 64 * s / (2 * r)); };
  Builder g(a.g, kDcganLatent, 1);
  g.tconv("project", width(4), 4, 1, 0);
  g.norm("project.bn", "batch_norm");
  g.act("project.relu", "relu");
  for (std::int64_t r = 8; r < s; r *= 2) {
    const std::string p = "up" + std::to_string(r);
    g.tconv(p + ".tconv", width(r), 4, 2, 1);
    g.norm(p + ".bn", "batch_norm");
    g.act(p + ".relu", "relu");
  }
  g.tconv("out.tconv", 1, 4, 2, 1);
  g.act("out.tanh", "tanh");

  Builder d(a.d, 1, s);
  for (int l = 0; d.side() > 4; ++l) {
    const std::string p = "down" + std::to_string(d.side() / 2);
    d.conv(p + ".conv", std::min<std::int64_t>(512, std::int64_t{64} << l), 4, 2, 1);
    if (l > 0) d.norm(p + ".bn", "batch_norm");
    d.act(p + ".lrelu", "leaky_relu");
  }
  d.conv("out.conv", 1, 4, 1, 0);
  d.act("out.sigmoid", "sigmoid");
  a.image_elements = kDcganLatent + s * s * s;
  return a;
}

// U-Net down to 1^3 with k4 s2 convolutions and a 3-layer-stride PatchGAN.
ArchLayers pix2pix3d(std::int64_t s) {
  ArchLayers a;
  const int levels = log2_exact(s);
  const auto width = [](int l) { return std::min<std::int64_t>(512, std::int64_t{64} << l); };
  Builder g(a.g, 1, s);
  std::vector<std::int64_t> skip;
  for (int l = 0; l < levels; ++l) {
    const std::string p = "enc" + std::to_string(l);
    g.conv(p + ".conv", width(l), 4, 2, 1);
    if (l > 0 && l < levels - 1) g.norm(p + ".bn", "batch_norm");
    g.act(p + ".lrelu", "leaky_relu");
    skip.push_back(width(l));
  }
  for (int l = levels - 2; l >= 0; --l) {
    const std::string p = "dec" + std::to_string(l);
    g.tconv(p + ".tconv", width(l), 4, 2, 1);
    g.norm(p + ".bn", "batch_norm");
    g.act(p + ".relu", "relu");
    if (l >= levels - 4) g.act(p + ".dropout", "dropout");
    g.concat(p + ".concat", skip[static_cast<std::size_t>(l)]);
  }
  g.tconv("out.tconv", 1, 4, 2, 1);
  g.act("out.tanh", "tanh");

  Builder d(a.d, 2, s);
  d.conv("c64.conv", 64, 4, 2, 1);
  d.act("c64.lrelu", "leaky_relu");
  d.conv("c128.conv", 128, 4, 2, 1);
  d.norm("c128.bn", "batch_norm");
  d.act("c128.lrelu", "leaky_relu");
  d.conv("c256.conv", 256, 4, 2, 1);
  d.norm("c256.bn", "batch_norm");
  d.act("c256.lrelu", "leaky_relu");
  d.conv("c512.conv", 512, 4, 1, 1);
  d.norm("c512.bn", "batch_norm");
  d.act("c512.lrelu", "leaky_relu");
  d.conv("out.conv", 1, 4, 1, 1);
  d.act("out.sigmoid", "sigmoid");
  a.image_elements = s * s * s + 2 * s * s * s + s * s * s;
  return a;
}

// Fully grown progressive ladder; the final stage has 128 channels and widths
// double per stage towards the seed, capped at 512.
ArchLayers pggan3d(std::int64_t s) {
  ArchLayers a;
  const auto width = [s](std::int64_t r) { return std::min<std::int64_t>(512, 128 * s / r); };
  Builder g(a.g, kPgganLatent, 1);
  g.tconv("seed.dense", width(4), 4, 1, 0);
  g.act("seed.lrelu", "leaky_relu");
  g.norm("seed.pn", "pixel_norm");
  g.conv("seed.conv", width(4), 3, 1, 1);
  g.act("seed.lrelu2", "leaky_relu");
  g.norm("seed.pn2", "pixel_norm");
  for (std::int64_t r = 8; r <= s; r *= 2) {
    const std::string p = "g" + std::to_string(r);
    g.upsample(p + ".up");
    for (int c = 1; c <= 2; ++c) {
      g.conv(p + ".conv" + std::to_string(c), width(r), 3, 1, 1);
      g.act(p + ".lrelu" + std::to_string(c), "leaky_relu");
      g.norm(p + ".pn" + std::to_string(c), "pixel_norm");
    }
  }
  g.conv("to_rgb", 1, 1, 1, 0);

  Builder d(a.d, 1, s);
  d.conv("from_rgb", width(s), 1, 1, 0);
  d.act("from_rgb.lrelu", "leaky_relu");
  for (std::int64_t r = s; r > 4; r /= 2) {
    const std::string p = "d" + std::to_string(r);
    d.conv(p + ".conv1", width(r), 3, 1, 1);
    d.act(p + ".lrelu1", "leaky_relu");
    d.conv(p + ".conv2", width(r / 2), 3, 1, 1);
    d.act(p + ".lrelu2", "leaky_relu");
    d.pool(p + ".pool");
  }
  d.concat("mbstd", 1);
  d.conv("final.conv", width(4), 3, 1, 1);
  d.act("final.lrelu", "leaky_relu");
  d.conv("final.dense", width(4), 4, 1, 0);
  d.act("final.lrelu2", "leaky_relu");
  d.conv("final.out", 1, 1, 1, 0);
  a.image_elements = kPgganLatent + s * s * s;
  return a;
}

std::int64_t cube(std::int64_t s) { return s * s * s; }

ArchLayers cascade_stage(const nn::NetConfig& g, std::int64_t g_side, const nn::NetConfig& d, std::int64_t d_side) {
  ArchLayers a;
  a.g = nn::summarize(g, g_side);
  a.d = nn::summarize(d, d_side);
  const std::int64_t out_side = nn::output_side(g, g_side);
  a.image_elements = g.in_channels * cube(g_side) + d.in_channels * cube(d_side) + cube(out_side);
  return a;
}

std::int64_t activation_bytes(const std::vector<nn::LayerSummary>& layers, std::vector<MemoryRow>* rows,
                              const std::string& net) {
  std::int64_t total = 0;
  for (const auto& l : layers) {
    const std::int64_t b = nn::numel(l.output) * kScalarBytes;
    total += b;
    if (rows) rows->push_back({net, l.name, l.kind, l.output, b, l.params});
  }
  return total;
}

std::int64_t param_count(const std::vector<nn::LayerSummary>& layers) {
  std::int64_t n = 0;
  for (const auto& l : layers) n += l.params;
  return n;
}

constexpr const char* kCsvHeader = "arch,side,activations_G,activations_D,params,grads,optimizer,images,total_bytes";

std::string format_bytes(double b) {
  const char* units[] = {"B", "KB", "MB", "GB", "TB", "PB"};
  int u = 0;
  while (b >= 1000.0 && u < 5) {
    b /= 1000.0;
    ++u;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g %s", b, units[u]);
  return buf;
}

}  // namespace

ArchLayers architecture_layers(const std::string& arch, std::int64_t side) {
  const bool baseline = arch == "dcgan3d" || arch == "pix2pix3d" || arch == "pggan3d";
  const bool cascade = arch == "lr64" || arch == "hr32";
  if (!baseline && !cascade)
    throw ValidationError("unknown architecture '" + arch + "' (expected dcgan3d, pix2pix3d, pggan3d, lr64 or hr32)");
  if (baseline && (!power_of_two(side) || side < 32))
    throw ValidationError(arch + ": side must be a power of two >= 32, got " + std::to_string(side));
  if (cascade && (!power_of_two(side) || side < 64))
    throw ValidationError(arch + ": side must be a power of two >= 64, got " + std::to_string(side));

  if (arch == "dcgan3d") return dcgan3d(side);
  if (arch == "pix2pix3d") return pix2pix3d(side);
  if (arch == "pggan3d") return pggan3d(side);
  if (arch == "lr64") return cascade_stage(nn::NetConfig::lr_unet(), 128, nn::NetConfig::discriminator(0), 64);
  return cascade_stage(nn::NetConfig::hr_resnet(1), 32, nn::NetConfig::discriminator(1), 32);
}

MemoryReport estimate_memory(const std::string& arch, std::int64_t side) {
  const ArchLayers a = architecture_layers(arch, side);
  MemoryReport r;
  r.arch = arch;
  r.side = side;
  r.activations_g = activation_bytes(a.g, &r.rows, "G");
  r.activations_d = activation_bytes(a.d, &r.rows, "D");
  r.params = (param_count(a.g) + param_count(a.d)) * kScalarBytes;
  r.grads = r.params;
  r.optimizer = 2 * r.params;
  r.images = a.image_elements * kScalarBytes;
  r.total = r.activations_g + r.activations_d + r.params + r.grads + r.optimizer + r.images;
  return r;
}

std::map<std::string, double> fit_growth(const std::vector<MemoryReport>& reports) {
  std::map<std::string, std::vector<std::pair<double, double>>> pts;
  for (const auto& r : reports) {
    if (r.side <= 0 || r.total <= 0) throw ValidationError("fit_growth: sides and totals must be positive");
    pts[r.arch].emplace_back(std::log(static_cast<double>(r.side)), std::log(static_cast<double>(r.total)));
  }
  std::map<std::string, double> out;
  for (const auto& [arch, p] : pts) {
    if (p.size() < 3)
      throw ValidationError("fit_growth: " + arch + " has " + std::to_string(p.size()) + " sizes, need at least 3");
    double mx = 0, my = 0;
    for (const auto& [x, y] : p) {
      mx += x;
      my += y;
    }
    mx /= static_cast<double>(p.size());
    my /= static_cast<double>(p.size());
    double sxy = 0, sxx = 0;
    for (const auto& [x, y] : p) {
      sxy += (x - mx) * (y - my);
      sxx += (x - mx) * (x - mx);
    }
    if (sxx == 0) throw ValidationError("fit_growth: " + arch + " needs at least two distinct sides");
    out[arch] = sxy / sxx;
  }
  return out;
}

std::string memory_csv(const std::vector<MemoryReport>& reports) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const auto& r : reports)
    os << r.arch << ',' << r.side << ',' << r.activations_g << ',' << r.activations_d << ',' << r.params << ','
       << r.grads << ',' << r.optimizer << ',' << r.images << ',' << r.total << '\n';
  return os.str();
}

void write_memory_csv(const std::vector<MemoryReport>& reports, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << memory_csv(reports);
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

std::vector<MemoryReport> read_memory_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != kCsvHeader)
    throw ValidationError(path.string() + ": expected header '" + std::string(kCsvHeader) + "'");
  std::vector<MemoryReport> out;
  for (int lineno = 2; std::getline(f, line); ++lineno) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() != 9) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 9 columns");
    MemoryReport r;
    r.arch = cells[0];
    try {
      std::int64_t* fields[] = {&r.side,   &r.activations_g, &r.activations_d, &r.params,
                                &r.grads,  &r.optimizer,     &r.images,        &r.total};
      for (std::size_t i = 0; i < 8; ++i) {
        std::size_t used = 0;
        *fields[i] = std::stoll(cells[i + 1], &used);
        if (used != cells[i + 1].size()) throw std::invalid_argument("trailing characters");
      }
    } catch (const std::exception&) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string memory_svg(const std::vector<MemoryReport>& reports) {
  if (reports.empty()) throw ValidationError("memory_svg: no reports");
  constexpr double W = 720, H = 480, L = 90, R = 150, T = 30, B = 60;
  std::map<std::string, std::vector<const MemoryReport*>> series;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& r : reports) {
    if (r.side <= 0 || r.total <= 0) throw ValidationError("memory_svg: sides and totals must be positive");
    series[r.arch].push_back(&r);
    xmin = std::min(xmin, std::log2(static_cast<double>(r.side)));
    xmax = std::max(xmax, std::log2(static_cast<double>(r.side)));
    ymin = std::min(ymin, std::log10(static_cast<double>(r.total)));
    ymax = std::max(ymax, std::log10(static_cast<double>(r.total)));
  }
  for (auto& [arch, s] : series)
    std::sort(s.begin(), s.end(), [](const MemoryReport* a, const MemoryReport* b) { return a->side < b->side; });
  xmin = std::floor(xmin);
  xmax = std::max(std::ceil(xmax), xmin + 1);
  ymin = std::floor(ymin);
  ymax = std::max(std::ceil(ymax), ymin + 1);
  const auto px = [&](double lx) { return L + (lx - xmin) / (xmax - xmin) * (W - L - R); };
  const auto py = [&](double ly) { return H - B - (ly - ymin) / (ymax - ymin) * (H - T - B); };

  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" viewBox=\"0 0 %g %g\" "
                "font-family=\"sans-serif\" font-size=\"12\">\n",
                W, H, W, H);
  os << buf << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (double lx = xmin; lx <= xmax + 1e-9; lx += 1) {
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#ddd\"/>"
                  "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\">%.0f</text>\n",
                  px(lx), py(ymin), px(lx), py(ymax), px(lx), py(ymin) + 18, std::exp2(lx));
    os << buf;
  }
  for (double ly = ymin; ly <= ymax + 1e-9; ly += 1) {
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#ddd\"/>"
                  "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"end\">%s</text>\n",
                  px(xmin), py(ly), px(xmax), py(ly), px(xmin) - 6, py(ly) + 4,
                  format_bytes(std::pow(10.0, ly)).c_str());
    os << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\">image side (voxels)</text>\n"
                "<text x=\"20\" y=\"%.2f\" text-anchor=\"middle\" transform=\"rotate(-90 20 %.2f)\">"
                "training memory (bytes)</text>\n",
                (px(xmin) + px(xmax)) / 2, H - 15, (py(ymin) + py(ymax)) / 2, (py(ymin) + py(ymax)) / 2);
  os << buf;

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  int idx = 0;
  for (const auto& [arch, s] : series) {
    const char* color = colors[idx % 7];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto* r : s) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(std::log2(static_cast<double>(r->side))),
                    py(std::log10(static_cast<double>(r->total))));
      os << buf;
    }
    os << "\"/>\n";
    for (const auto* r : s) {
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\"/>\n",
                    px(std::log2(static_cast<double>(r->side))), py(std::log10(static_cast<double>(r->total))), color);
      os << buf;
    }
    // Cubic fit through the points (intercept only), carried across the axis.
    const bool constant = s.front()->total == s.back()->total;
    if (!constant && s.size() >= 2) {
      double c = 0;
      for (const auto* r : s)
        c += std::log10(static_cast<double>(r->total)) - 3.0 * std::log10(static_cast<double>(r->side));
      c /= static_cast<double>(s.size());
      const double x0 = std::log2(static_cast<double>(s.front()->side));
      double x1 = xmax;
      // Clip where the line leaves the plot.
      const double x_top = (ymax - c) / (3.0 * std::log10(2.0));
      x1 = std::min(x1, x_top);
      if (x1 > x0) {
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\" stroke-dasharray=\"5,4\"/>\n",
                      px(x0), py(c + 3.0 * x0 * std::log10(2.0)), px(x1), py(c + 3.0 * x1 * std::log10(2.0)), color);
        os << buf;
      }
    }
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.2f\" y=\"%.2f\" width=\"12\" height=\"12\" fill=\"%s\"/>"
                  "<text x=\"%.2f\" y=\"%.2f\">%s</text>\n",
                  W - R + 15, T + 20.0 * idx, color, W - R + 32, T + 20.0 * idx + 10, arch.c_str());
    os << buf;
    ++idx;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace cascade3d
