#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cascade3d/networks.hpp"

namespace cascade3d {

// Architectures known to the estimator. Baselines process the whole volume;
// lr64 and hr32 are the LR stage at side 64 and one HR stage on 32^3 patches.
inline const std::vector<std::string>& memory_architectures() {
  static const std::vector<std::string> ids{"dcgan3d", "pix2pix3d", "pggan3d", "lr64", "hr32"};
  return ids;
}

struct MemoryRow {
  std::string net;  // "G" or "D"
  std::string name;
  std::string kind;
  nn::Shape output;
  std::int64_t activation_bytes = 0;
  std::int64_t params = 0;
};

struct MemoryReport {
  std::string arch;
  std::int64_t side = 0;
  std::int64_t activations_g = 0;
  std::int64_t activations_d = 0;
  std::int64_t params = 0;
  std::int64_t grads = 0;
  std::int64_t optimizer = 0;
  std::int64_t images = 0;
  std::int64_t total = 0;
  std::vector<MemoryRow> rows;
};

inline constexpr std::int64_t kScalarBytes = 4;

// One G and one D forward/backward at batch 1: every op output is retained
// once, plus parameters, their gradients, two Adam moments and the image
// volumes fed to or produced for the pair.
MemoryReport estimate_memory(const std::string& arch, std::int64_t side);

// The symbolic layer lists behind estimate_memory.
struct ArchLayers {
  std::vector<nn::LayerSummary> g, d;
  std::int64_t image_elements = 0;
};
ArchLayers architecture_layers(const std::string& arch, std::int64_t side);

// Least-squares slope of log(total) against log(side) per architecture.
std::map<std::string, double> fit_growth(const std::vector<MemoryReport>& reports);

void write_memory_csv(const std::vector<MemoryReport>& reports, const std::filesystem::path& path);
std::string memory_csv(const std::vector<MemoryReport>& reports);
// Reads the summary columns back; rows are left empty.
std::vector<MemoryReport> read_memory_csv(const std::filesystem::path& path);

// Log-log chart of total bytes against side, one series per architecture,
// with dashed cubic extrapolations of the baselines.
std::string memory_svg(const std::vector<MemoryReport>& reports);

}  // namespace cascade3d
