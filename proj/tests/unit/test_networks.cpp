#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cascade3d/errors.hpp"
#include "cascade3d/networks.hpp"

using namespace cascade3d;
using namespace cascade3d::nn;

namespace {

template <typename T>
Tensor<T> random_input(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<T> v(static_cast<std::size_t>(numel(s)));
  for (T& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>::from(s, v);
}

double scalar(const Tensor<double>& t) { return t.item(); }

}  // namespace

TEST_SUITE("networks") {
  TEST_CASE("LR generator maps a 128 sketch to a 64 volume in [0,1]") {
    Network<float> g(NetConfig::lr_unet(3));
    NoGradGuard ng;
    const auto y = g.forward(random_input<float>({1, 1, 128, 128, 128}, 1), false);
    CHECK(y.shape() == Shape{1, 1, 64, 64, 64});
    for (float v : y.values()) REQUIRE((v >= 0.0f && v <= 1.0f));
    CHECK(output_side(g.config(), 128) == 64);
  }

  TEST_CASE("HR generator preserves the patch shape") {
    Network<float> g(NetConfig::hr_resnet(1, 2));
    NoGradGuard ng;
    const auto y = g.forward(random_input<float>({1, 2, 32, 32, 32}, 2), false);
    CHECK(y.shape() == Shape{1, 1, 32, 32, 32});
    CHECK_THROWS_AS(g.forward(random_input<float>({1, 3, 32, 32, 32}, 2), false), ValidationError);
  }

  TEST_CASE("discriminator is fully convolutional") {
    Network<float> d1(NetConfig::discriminator(1, 4));
    Network<float> d0(NetConfig::discriminator(0, 4));
    CHECK(d1.config().in_channels == 3);
    CHECK(d0.config().in_channels == 2);
    NoGradGuard ng;
    const auto a = d1.forward(random_input<float>({1, 3, 32, 32, 32}, 3), false);
    const auto b = d1.forward(random_input<float>({1, 3, 64, 64, 64}, 3), false);
    CHECK(a.shape() == Shape{1, 1, 2, 2, 2});
    CHECK(b.shape() == Shape{1, 1, 4, 4, 4});
    for (float v : a.values()) CHECK((v > 0.0f && v < 1.0f));
  }

  TEST_CASE("a zeroed head yields exactly one half") {
    for (auto cfg : {NetConfig::hr_resnet(1, 5), NetConfig::lr_unet(5)}) {
      cfg.base_channels = 4;
      Network<double> g(cfg);
      g.zero_head();
      const std::int64_t side = cfg.family == NetFamily::lr_unet ? 32 : 16;
      NoGradGuard ng;
      const auto y = g.forward(random_input<double>({1, cfg.in_channels, side, side, side}, 9), true);
      for (double v : y.values()) REQUIRE(v == 0.5);
    }
  }

  TEST_CASE("default HR margin matches a hand count of padded convolutions") {
    const NetConfig cfg = NetConfig::hr_resnet(1);
    std::int64_t convs = 0;
    for (const auto& l : summarize(cfg, 32)) convs += l.kind == "conv3d";
    CHECK(convs == 1 + 2 * 6 + 1);
    // Stem and residual convolutions pad by one; the 1x1x1 head does not.
    const std::int64_t padded = convs - 1;
    CHECK(padded == 13);
    CHECK(valid_margin(cfg) == static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(padded)))));
    CHECK(valid_margin(cfg) == 4);
  }

  TEST_CASE("summaries agree with traced forward passes") {
    for (auto cfg : {NetConfig::hr_resnet(1, 1), NetConfig::discriminator(1, 1), NetConfig::lr_unet(1)}) {
      cfg.base_channels = 4;
      const std::int64_t side = cfg.family == NetFamily::lr_unet ? 32 : 16;
      Network<float> net(cfg);
      std::vector<LayerSummary> trace;
      net.forward(random_input<float>({1, cfg.in_channels, side, side, side}, 4), true, &trace);
      const auto sum = summarize(cfg, side);
      REQUIRE(sum.size() == trace.size());
      std::int64_t params = 0;
      for (std::size_t i = 0; i < sum.size(); ++i) {
        CHECK(sum[i].name == trace[i].name);
        CHECK(sum[i].output == trace[i].output);
        params += sum[i].params;
      }
      CHECK(params == net.parameter_count());
    }
  }

  TEST_CASE("loss closed forms") {
    const auto half = Tensor<double>::full({1, 1, 2, 2, 2}, 0.5);
    const auto img = Tensor<double>::full({1, 1, 4, 4, 4}, 0.3);
    const auto l = gan_losses(half, half, img, img, 100.0);
    CHECK(scalar(l.loss_d) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
    CHECK(scalar(l.loss_g) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(scalar(l.loss_g_l1) == 0.0);

    const auto target = Tensor<double>::zeros({1, 1, 4, 4, 4});
    const auto fake = Tensor<double>::full({1, 1, 4, 4, 4}, 0.01);
    const auto l2 = gan_losses(half, half, fake, target, 100.0);
    CHECK(100.0 * scalar(l2.loss_g_l1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(scalar(l2.loss_g) - scalar(l2.loss_g_adv) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("saturated scores are clamped before the log") {
    const auto ones = Tensor<double>::full({1, 1, 2, 2, 2}, 1.0);
    const auto zeros = Tensor<double>::zeros({1, 1, 2, 2, 2});
    const double ld = scalar(discriminator_loss(zeros, ones));
    CHECK(std::isfinite(ld));
    CHECK(ld == doctest::Approx(-2 * std::log(kScoreFloor)).epsilon(1e-6));
  }

  TEST_CASE("discriminator loss is smallest for confident correct scores") {
    double best = 1e300;
    double best_r = 0, best_f = 0;
    for (int i = 1; i < 20; ++i)
      for (int j = 1; j < 20; ++j) {
        const double r = i / 20.0, f = j / 20.0;
        const double v = scalar(discriminator_loss(Tensor<double>::full({1, 1, 2, 2, 2}, r),
                                                   Tensor<double>::full({1, 1, 2, 2, 2}, f)));
        CHECK(v == doctest::Approx(-std::log(r) - std::log(1 - f)).epsilon(1e-12));
        if (v < best) {
          best = v;
          best_r = r;
          best_f = f;
        }
      }
    CHECK(best_r == doctest::Approx(0.95));
    CHECK(best_f == doctest::Approx(0.05));
  }

  TEST_CASE("L1 gradient points back to the target") {
    std::vector<double> t{0.2, 0.5, 0.8, 0.1}, f{0.3, 0.4, 0.8001, 0.0};
    auto target = Tensor<double>::from({1, 1, 1, 2, 2}, t);
    auto fake = Tensor<double>::from({1, 1, 1, 2, 2}, f, true);
    l1_loss(fake, target).backward();
    for (std::size_t i = 0; i < 4; ++i) CHECK(fake.grad()[i] * (f[i] - t[i]) > 0.0);
  }

  TEST_CASE("checkpoints round trip and reject corruption") {
    NetConfig cfg = NetConfig::hr_resnet(2, 77);
    cfg.base_channels = 8;
    cfg.n_res_blocks = 2;
    Network<float> net(cfg);
    const auto path = std::filesystem::temp_directory_path() / "cascade3d_ckpt_test.ckpt";
    save_checkpoint(net, path, {{"epoch", 3}});
    const Checkpoint c = load_checkpoint(path);
    CHECK(c.meta["epoch"] == 3);
    CHECK(c.config.scale == 2);
    CHECK(c.config.base_channels == 8);
    Network<float> back = network_from_checkpoint<float>(c);
    const auto pa = net.parameters(), pb = back.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
      CHECK(std::equal(pa[i].values().begin(), pa[i].values().end(), pb[i].values().begin()));
    CHECK(encode_checkpoint(make_checkpoint(back, c.meta), back.architecture()) ==
          encode_checkpoint(make_checkpoint(net, c.meta), net.architecture()));

    auto bytes = encode_checkpoint(make_checkpoint(net), net.architecture());
    auto truncated = bytes;
    truncated.resize(truncated.size() - 4);
    CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    std::filesystem::remove(path);
  }

  TEST_CASE("family names round trip") {
    for (auto f : {NetFamily::lr_unet, NetFamily::hr_resnet, NetFamily::discriminator})
      CHECK(parse_net_family(to_string(f)) == f);
    CHECK_THROWS_AS(parse_net_family("vae"), ValidationError);
  }
}
