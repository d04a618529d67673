#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <json.hpp>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(CASCADE3D_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cascade3d_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("exit codes") {
    const fs::path d = scratch("codes");
    CHECK(run("--help") == 0);
    CHECK(run("plan --shape 512,512,512 --lr 64 --patch 32 --out " + d.string()) == 0);
    CHECK(run("plan --shape 512,512,512 --bogus 3") == 2);
    CHECK(run("sketch --in " + (d / "missing.vol").string() + " --out " + d.string()) == 2);
    CHECK(run("plan --shape 512,512 --out " + d.string()) == 2);
    CHECK(run("estimate-mem --arch pggan3d --side 48 --out " + d.string()) == 2);
    CHECK(run("frobnicate") == 2);
  }

  TEST_CASE("plan reports three HR scales for a 512 cube") {
    const fs::path d = scratch("plan");
    REQUIRE(run("plan --shape 512,512,512 --lr 64 --patch 32 --out " + d.string()) == 0);
    const auto j = nlohmann::json::parse(slurp(d / "plan.json"));
    CHECK(j["scales"].size() == 3);
  }

  TEST_CASE("pggan3d at 256 exceeds 100 GB") {
    const fs::path d = scratch("mem");
    REQUIRE(run("estimate-mem --arch pggan3d --side 256 --out " + d.string()) == 0);
    std::ifstream f(d / "memory.csv");
    std::string header, row;
    std::getline(f, header);
    std::getline(f, row);
    const std::string total = row.substr(row.rfind(',') + 1);
    CHECK(std::stod(total) > 100e9);
  }

  TEST_CASE("runs are replayable") {
    const fs::path a = scratch("rep_a"), b = scratch("rep_b");
    for (const fs::path& d : {a, b}) {
      REQUIRE(run("phantom --seed 3 --count 1 --threads 1 --out " + d.string()) == 0);
      REQUIRE(run("sketch --in " + (d / "phantom_3_noisy.vol").string() + " --threads 1 --out " + d.string()) == 0);
    }
    for (const auto& e : fs::directory_iterator(a)) {
      CAPTURE(e.path().filename().string());
      CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
    }
  }

  TEST_CASE("gradcheck passes through the CLI") {
    const fs::path d = scratch("gc");
    CHECK(run("gradcheck --seeds 1 --out " + d.string()) == 0);
    CHECK(fs::exists(d / "gradcheck.csv"));
  }
}
