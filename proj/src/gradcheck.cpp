#include "cascade3d/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cascade3d/errors.hpp"
#include "cascade3d/networks.hpp"
#include "cascade3d/ops.hpp"

namespace cascade3d::nn {

Tensor<double> weighted_sum(const Tensor<double>& x, std::span<const double> w) {
  if (static_cast<std::int64_t>(w.size()) != x.numel()) throw ValidationError("weighted_sum: weight count mismatch");
  auto weights = std::make_shared<std::vector<double>>(w.begin(), w.end());
  auto out = make_result<double>({1}, {x}, [weights](Node<double>& self) {
    Node<double>& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * (*weights)[i];
  });
  const auto v = x.values();
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * (*weights)[i];
  out.mutable_values()[0] = s;
  return out;
}

GradCheckResult check_gradients(const std::string& name, const ScalarFn& f, std::vector<Tensor<double>> inputs,
                                std::mt19937_64& rng, double h, std::int64_t max_entries, double floor) {
  GradCheckResult r;
  r.name = name;
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  f(inputs).backward();
  for (auto& t : inputs) {
    const std::int64_t n = t.numel();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (n > max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(max_entries));
    }
    std::vector<double> analytic(static_cast<std::size_t>(n), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    double scale = 0.0;
    for (double a : analytic) scale = std::max(scale, std::abs(a));
    const double tensor_floor = std::max(floor, 1e-4 * scale);
    NoGradGuard guard;
    for (auto i : idx) {
      double& v = t.mutable_values()[static_cast<std::size_t>(i)];
      const double keep = v;
      // A step that crosses an activation kink is not a valid probe of the
      // derivative; shrink it until both evaluations stay in one smooth piece.
      double numeric = 0.0;
      for (double step = h;; step *= 0.1) {
        KinkLog plus_log;
        v = keep + step;
        const double fp = f(inputs).item();
        std::vector<std::uint8_t> plus = plus_log.signs();
        KinkLog minus_log;
        v = keep - step;
        const double fm = f(inputs).item();
        v = keep;
        numeric = (fp - fm) / (2.0 * step);
        if (plus == minus_log.signs() || step < h * 1e-3) {
          if (step < h) ++r.kink_retries;
          break;
        }
      }
      const double a = analytic[static_cast<std::size_t>(i)];
      const double denom = std::max({std::abs(a), std::abs(numeric), tensor_floor});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / denom);
      ++r.entries;
    }
  }
  return r;
}

namespace {

struct Suite {
  std::mt19937_64 rng;
  std::vector<GradCheckResult> results;

  std::vector<double> normal(std::int64_t n, double mean = 0.0, double sd = 1.0) {
    std::normal_distribution<double> d(mean, sd);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = d(rng);
    return v;
  }
  std::vector<double> uniform(std::int64_t n, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = d(rng);
    return v;
  }
  Tensor<double> randn(const Shape& s, double sd = 1.0) { return Tensor<double>::from(s, normal(numel(s), 0.0, sd)); }
  Tensor<double> rand(const Shape& s, double lo, double hi) { return Tensor<double>::from(s, uniform(numel(s), lo, hi)); }
  // Values bounded away from zero so kinked ops stay differentiable under h.
  Tensor<double> away_from_zero(const Shape& s) {
    auto v = uniform(numel(s), 0.05, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& x : v)
      if (sign(rng)) x = -x;
    return Tensor<double>::from(s, v);
  }
  std::int64_t side(std::int64_t lo, std::int64_t hi) { return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng); }

  // Probes `op` through a random linear functional of its output.
  void unary(const std::string& name, const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& op,
             std::vector<Tensor<double>> inputs) {
    Tensor<double> probe_shape;
    {
      NoGradGuard g;
      probe_shape = op(inputs);
    }
    const auto w = normal(probe_shape.numel(), 0.0, 1.0 / std::sqrt(static_cast<double>(probe_shape.numel())));
    const ScalarFn f = [op, w](const std::vector<Tensor<double>>& in) { return weighted_sum(op(in), w); };
    results.push_back(check_gradients(name, f, std::move(inputs), rng));
  }
};

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, bool include_networks) {
  Suite s{std::mt19937_64(seed), {}};
  using V = std::vector<Tensor<double>>;

  {
    const std::int64_t n = s.side(4, 6), cin = s.side(1, 3), cout = s.side(1, 3);
    s.unary("conv3d k3 zero pad",
            [](const V& in) { return conv3d(in[0], in[1], in[2], ConvOptions{1, 1, PadMode::zero}); },
            {s.randn({1, cin, n, n, n}), s.randn({cout, cin, 3, 3, 3}, 0.3), s.randn({cout})});
    s.unary("conv3d k3 stride2 replicate pad",
            [](const V& in) { return conv3d(in[0], in[1], in[2], ConvOptions{2, 1, PadMode::replicate}); },
            {s.randn({1, cin, n, n, n}), s.randn({cout, cin, 3, 3, 3}, 0.3), s.randn({cout})});
    s.unary("conv3d k4 stride2 no bias",
            [](const V& in) { return conv3d(in[0], in[1], Tensor<double>(), ConvOptions{2, 1, PadMode::zero}); },
            {s.randn({2, cin, n, n, n}), s.randn({cout, cin, 4, 4, 4}, 0.3)});
    s.unary("conv3d_transpose k2 stride2",
            [](const V& in) { return conv3d_transpose(in[0], in[1], in[2], 2, 0); },
            {s.randn({1, cin, 3, 3, 3}), s.randn({cin, cout, 2, 2, 2}, 0.5), s.randn({cout})});
    s.unary("conv3d_transpose k3 stride2 pad1",
            [](const V& in) { return conv3d_transpose(in[0], in[1], in[2], 2, 1); },
            {s.randn({1, cin, 3, 3, 3}), s.randn({cin, cout, 3, 3, 3}, 0.5), s.randn({cout})});
  }
  {
    const std::int64_t n = s.side(2, 4), c = s.side(1, 3);
    s.unary("instance_norm affine", [](const V& in) { return instance_norm(in[0], in[1], in[2]); },
            {s.randn({2, c, n, n, n}), s.randn({c}), s.randn({c})});
    s.unary("instance_norm plain",
            [](const V& in) { return instance_norm(in[0], Tensor<double>(), Tensor<double>()); },
            {s.randn({1, c, n, n, n})});
  }
  const Shape small{1, 2, 2, 4, 4};
  s.unary("leaky_relu", [](const V& in) { return leaky_relu(in[0], 0.2); }, {s.away_from_zero(small)});
  s.unary("relu", [](const V& in) { return relu(in[0]); }, {s.away_from_zero(small)});
  s.unary("tanh", [](const V& in) { return tanh(in[0]); }, {s.randn(small)});
  s.unary("sigmoid", [](const V& in) { return sigmoid(in[0]); }, {s.randn(small)});
  {
    const std::uint64_t mask_seed = s.rng();
    s.unary("dropout",
            [mask_seed](const V& in) {
              std::mt19937_64 r(mask_seed);
              return dropout(in[0], 0.5, true, r);
            },
            {s.randn(small)});
  }
  s.unary("nearest_upsample2x", [](const V& in) { return nearest_upsample2x(in[0]); }, {s.randn({1, 2, 2, 3, 2})});
  s.unary("avg_downsample2x", [](const V& in) { return avg_downsample2x(in[0]); }, {s.randn({1, 2, 4, 4, 6})});
  s.unary("concat_channels", [](const V& in) { return concat_channels<double>({in[0], in[1]}); },
          {s.randn({1, 1, 2, 3, 2}), s.randn({1, 2, 2, 3, 2})});
  s.unary("add", [](const V& in) { return add(in[0], in[1]); }, {s.randn(small), s.randn(small)});
  s.unary("sub", [](const V& in) { return sub(in[0], in[1]); }, {s.randn(small), s.randn(small)});
  s.unary("affine", [](const V& in) { return affine(in[0], -1.7, 0.3); }, {s.randn(small)});
  s.unary("abs", [](const V& in) { return abs(in[0]); }, {s.away_from_zero(small)});
  s.unary("log_clamped", [](const V& in) { return log_clamped(in[0], 1e-7, 1.0 - 1e-7); }, {s.rand(small, 0.1, 0.9)});
  s.unary("mean", [](const V& in) { return mean(in[0]); }, {s.randn(small)});
  s.results.push_back(check_gradients(
      "gan discriminator loss", [](const V& in) { return discriminator_loss(in[0], in[1]); },
      {s.rand({1, 1, 2, 2, 2}, 0.05, 0.95), s.rand({1, 1, 2, 2, 2}, 0.05, 0.95)}, s.rng));
  s.results.push_back(check_gradients(
      "gan generator loss",
      [](const V& in) {
        const auto l = gan_losses(Tensor<double>(), in[0], in[1], in[2], 100.0);
        return l.loss_g;
      },
      {s.rand({1, 1, 2, 2, 2}, 0.05, 0.95), s.rand({1, 1, 3, 3, 3}, 0.0, 0.5),
       s.rand({1, 1, 3, 3, 3}, 0.55, 1.0)},
      s.rng));

  if (include_networks) {
    auto check_net = [&](const std::string& name, NetConfig cfg, std::int64_t side) {
      Network<double> net(cfg);
      const std::uint64_t dropout_seed = s.rng();
      auto x = s.rand({1, cfg.in_channels, side, side, side}, 0.0, 1.0);
      V inputs{x};
      for (const auto& p : net.parameters()) inputs.push_back(p);
      Tensor<double> probe;
      {
        NoGradGuard g;
        net.seed_dropout(dropout_seed);
        probe = net.forward(x, true);
      }
      const auto w = s.normal(probe.numel(), 0.0, 1.0 / std::sqrt(static_cast<double>(probe.numel())));
      const ScalarFn f = [&net, w, dropout_seed](const V& in) {
        net.seed_dropout(dropout_seed);
        return weighted_sum(net.forward(in[0], true), w);
      };
      // Weights at std 0.2 whatever the family's init, so the check exercises
      // nonlinear regimes; random shifts keep dead channels off a kink.
      std::normal_distribution<double> shift(0.0, 0.3);
      for (auto p : net.parameters()) {
        if (p.shape().size() == 5) {
          double ss = 0.0;
          for (double v : p.values()) ss += v * v;
          const double gain = 0.2 / std::sqrt(ss / static_cast<double>(p.numel()));
          for (auto& v : p.mutable_values()) v *= gain;
        } else
          for (auto& v : p.mutable_values()) v += shift(s.rng);
      }
      s.results.push_back(check_gradients(name, f, inputs, s.rng, 1e-5, 24));
    };
    NetConfig lr = NetConfig::lr_unet(s.rng());
    lr.base_channels = 2;
    lr.depth = 3;
    check_net("lr_unet generator", lr, 16);
    NetConfig hr = NetConfig::hr_resnet(1, s.rng());
    hr.base_channels = 3;
    hr.n_res_blocks = 2;
    check_net("hr_resnet generator", hr, 6);
    NetConfig d0 = NetConfig::discriminator(0, s.rng());
    d0.base_channels = 2;
    d0.depth = 3;
    check_net("discriminator scale 0", d0, 16);
    NetConfig d1 = NetConfig::discriminator(1, s.rng());
    d1.base_channels = 2;
    d1.depth = 2;
    check_net("discriminator scale 1", d1, 8);
  }
  return s.results;
}

}  // namespace cascade3d::nn
