#include <cmath>
#include <random>

#include "doctest.h"
#include "nowcast/autodiff.hpp"
#include "nowcast/errors.hpp"
#include "nowcast/gradcheck.hpp"
#include "nowcast/model.hpp"
#include "test_support.hpp"

using namespace nowcast;
using nowcast::testing::bit_equal;
using nowcast::testing::max_abs_diff;
using nowcast::testing::random_tensor;

namespace {

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Reference architecture, one row per trainable array.
const std::vector<std::pair<std::string, Shape>>& architecture_table() {
  static const std::vector<std::pair<std::string, Shape>> rows = {
      {"hidden-state-weights", {20}},
      {"L0-encoder-downsconv-weight", {16, 25, 6, 6}},
      {"L0-encoder-downsconv-bias", {16}},
      {"L0-encoder-convlstmcell-weight", {256, 80, 3, 3}},
      {"L0-encoder-convlstmcell-bias", {256}},
      {"L0-encoder-groupnorm-weight", {256}},
      {"L0-encoder-groupnorm-bias", {256}},
      {"L1-encoder-downsconv-weight", {192, 64, 5, 5}},
      {"L1-encoder-downsconv-bias", {192}},
      {"L1-encoder-convlstmcell-weight", {768, 384, 3, 3}},
      {"L1-encoder-convlstmcell-bias", {768}},
      {"L1-encoder-groupnorm-weight", {768}},
      {"L1-encoder-groupnorm-bias", {768}},
      {"L2-encoder-downsconv-weight", {192, 192, 3, 3}},
      {"L2-encoder-downsconv-bias", {192}},
      {"L2-encoder-convlstmcell-weight", {768, 384, 3, 3}},
      {"L2-encoder-convlstmcell-bias", {768}},
      {"L2-encoder-groupnorm-weight", {768}},
      {"L2-encoder-groupnorm-bias", {768}},
      {"hrrr-conditioning-downconv-0-weight", {16, 1, 6, 6}},
      {"hrrr-conditioning-downconv-0-bias", {16}},
      {"hrrr-conditioning-downconv-1-weight", {192, 16, 5, 5}},
      {"hrrr-conditioning-downconv-1-bias", {192}},
      {"hrrr-conditioning-downconv-2-weight", {192, 192, 3, 3}},
      {"hrrr-conditioning-downconv-2-bias", {192}},
      {"L2-forecaster-convlstmcell-weight", {768, 384, 3, 3}},
      {"L2-forecaster-convlstmcell-bias", {768}},
      {"L2-forecaster-groupnorm-weight", {768}},
      {"L2-forecaster-groupnorm-bias", {768}},
      {"L2-forecaster-upconv-weight", {192, 192, 4, 4}},
      {"L2-forecaster-upconv-bias", {192}},
      {"L1-forecaster-convlstmcell-weight", {768, 384, 3, 3}},
      {"L1-forecaster-convlstmcell-bias", {768}},
      {"L1-forecaster-groupnorm-weight", {768}},
      {"L1-forecaster-groupnorm-bias", {768}},
      {"L1-forecaster-upconv-weight", {192, 64, 5, 5}},
      {"L1-forecaster-upconv-bias", {64}},
      {"L0-forecaster-convlstmcell-weight", {256, 128, 3, 3}},
      {"L0-forecaster-convlstmcell-bias", {256}},
      {"L0-forecaster-groupnorm-weight", {256}},
      {"L0-forecaster-groupnorm-bias", {256}},
      {"L0-forecaster-upconv-weight", {64, 16, 7, 7}},
      {"L0-forecaster-upconv-bias", {16}},
      {"final-conv.0.weight", {16, 16, 3, 3}},
      {"final-conv.0.bias", {16}},
      {"final-conv.2.weight", {1, 16, 1, 1}},
      {"final-conv.2.bias", {1}},
  };
  return rows;
}

BasicModelParams<double> zero_params(const ModelConfig& cfg) {
  auto p = init_params(cfg, 0).cast_to<double>();
  for (auto& t : p.tensors()) {
    auto copy = t;
    for (auto& v : copy.mutable_data()) v = 0.0;
  }
  return p;
}

}  // namespace

TEST_CASE("default configuration reproduces the architecture table") {
  const auto cfg = ModelConfig::production();
  CHECK_NOTHROW(cfg.validate());
  const auto sizes = cfg.level_sizes();
  CHECK(sizes == std::array<std::int64_t, 3>{84, 28, 14});
  CHECK(parameter_manifest(cfg) == architecture_table());

  const auto params = init_params(cfg, 1);
  const auto named = params.named();
  REQUIRE(named.size() == architecture_table().size());
  for (std::size_t i = 0; i < named.size(); ++i) {
    CHECK(named[i].first == architecture_table()[i].first);
    CHECK(named[i].second.shape() == architecture_table()[i].second);
  }
}

TEST_CASE("configuration validation") {
  auto cfg = ModelConfig::toy();
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.level_sizes() == std::array<std::int64_t, 3>{8, 4, 2});
  auto bad = cfg;
  bad.layers[0].up_kernel = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.group_norm_groups = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.layers[2].down_stride = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("init_params") {
  const auto cfg = ModelConfig::toy();
  auto a = init_params(cfg, 42), b = init_params(cfg, 42), c = init_params(cfg, 43);
  auto ta = a.tensors(), tb = b.tensors(), tc = c.tensors();
  bool any_diff = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(bit_equal(ta[i], tb[i]));
    any_diff = any_diff || !bit_equal(ta[i], tc[i]);
  }
  CHECK(any_diff);
  const auto w = a.bridge_weights;
  for (int i = 0; i < cfg.t_in - 1; ++i) CHECK(w.data()[i] == 0.0f);
  CHECK(w.data()[cfg.t_in - 1] == 1.0f);
  CHECK(a.encoder_cells[0].gn_gamma.data()[0] == 1.0f);
  CHECK(a.encoder_cells[0].gn_beta.data()[0] == 0.0f);
  CHECK(a.encoder_down[0].bias.data()[0] == 0.0f);

  auto no_hrrr = cfg;
  no_hrrr.use_hrrr = false;
  CHECK(parameter_manifest(no_hrrr).size() + 6 == parameter_manifest(cfg).size());
}

TEST_CASE("lv_stack and lv_unstack") {
  // 10x10, F=5, each 2x2 tile filled with its tile index.
  Tensor<float> frame(Shape{1, 1, 10, 10});
  auto d = frame.mutable_data();
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c) d[r * 10 + c] = static_cast<float>((r / 2) * 5 + c / 2);
  auto st = lv_stack(frame, 5);
  CHECK(st.shape() == Shape{1, 25, 2, 2});
  for (int k = 0; k < 25; ++k)
    for (int i = 0; i < 4; ++i) CHECK(st.data()[k * 4 + i] == static_cast<float>(k));
  CHECK(bit_equal(lv_unstack(st, 5), frame));

  std::mt19937_64 rng(2);
  auto r = random_tensor<float>(Shape{2, 1, 10, 10}, rng);
  CHECK(bit_equal(lv_unstack(lv_stack(r, 5), 5), r));
  CHECK(bit_equal(lv_stack(r, 1), r));
  CHECK(bit_equal(lv_unstack(r, 1), r));

  // Center tile of the large viewport lands in channel 12.
  auto big = random_tensor<float>(Shape{1, 1, 1280, 1280}, rng);
  auto big_st = lv_stack(big, 5);
  CHECK(big_st.shape() == Shape{1, 25, 256, 256});
  CHECK(big_st.at({0, 12, 0, 0}) == big.at({0, 0, 512, 512}));
  CHECK(big_st.at({0, 12, 255, 255}) == big.at({0, 0, 767, 767}));
  CHECK(bit_equal(lv_unstack(big_st, 5), big));

  CHECK_THROWS_AS(lv_stack(Tensor<float>(Shape{1, 1, 11, 11}), 5), ConfigError);
  CHECK_THROWS_AS(lv_unstack(Tensor<float>(Shape{1, 24, 2, 2}), 5), ConfigError);
}

TEST_CASE("convlstm cell step") {
  SUBCASE("zero weights and affine give zero state") {
    BasicCellParams<double> p{Tensor<double>(Shape{8, 4, 3, 3}), Tensor<double>(Shape{8}),
                              Tensor<double>(Shape{8}), Tensor<double>(Shape{8})};
    LayerState<double> s{Tensor<double>(Shape{1, 2, 3, 3}), Tensor<double>(Shape{1, 2, 3, 3})};
    std::mt19937_64 rng(1);
    auto x = random_tensor(Shape{1, 2, 3, 3}, rng);
    auto out = convlstm_cell_step(x, s, p, 4, 1e-5);
    // sigmoid(0) * 0 + sigmoid(0) * tanh(0) = 0
    for (double v : out.c.data()) CHECK(v == 0.0);
    for (double v : out.h.data()) CHECK(v == 0.0);
  }
  SUBCASE("saturated gates pass the candidate through") {
    const int ch = 2;
    BasicCellParams<double> p{Tensor<double>(Shape{4 * ch, 1 + ch, 3, 3}), Tensor<double>(Shape{4 * ch}),
                              Tensor<double>(Shape{4 * ch}), Tensor<double>(Shape{4 * ch})};
    auto beta = p.gn_beta.mutable_data();
    const double g_val = 0.3;
    for (int c = 0; c < ch; ++c) {
      beta[0 * ch + c] = 30;
      beta[1 * ch + c] = 30;
      beta[2 * ch + c] = g_val;
      beta[3 * ch + c] = 30;
    }
    std::mt19937_64 rng(4);
    LayerState<double> s{random_tensor(Shape{1, ch, 2, 2}, rng), random_tensor(Shape{1, ch, 2, 2}, rng)};
    auto x = random_tensor(Shape{1, 1, 2, 2}, rng);
    auto out = convlstm_cell_step(x, s, p, 4, 1e-5);
    for (std::size_t i = 0; i < out.c.numel(); ++i) {
      const double want_c = s.c.data()[i] + std::tanh(g_val);
      CHECK(out.c.data()[i] == doctest::Approx(want_c).epsilon(1e-9));
      CHECK(out.h.data()[i] == doctest::Approx(std::tanh(want_c)).epsilon(1e-9));
    }
  }
  SUBCASE("matches a scalar straight-line reference") {
    std::mt19937_64 rng(8);
    BasicCellParams<double> p{random_tensor(Shape{4, 2, 3, 3}, rng), random_tensor(Shape{4}, rng),
                              random_tensor(Shape{4}, rng, 0.5, 1.5), random_tensor(Shape{4}, rng)};
    LayerState<double> s{random_tensor(Shape{1, 1, 2, 2}, rng), random_tensor(Shape{1, 1, 2, 2}, rng)};
    auto x = random_tensor(Shape{1, 1, 2, 2}, rng);
    auto out = convlstm_cell_step(x, s, p, 4, 1e-5);

    // Input planes: channel 0 = x, channel 1 = h.
    auto in = [&](int ch, int r, int c) -> double {
      if (r < 0 || r > 1 || c < 0 || c > 1) return 0.0;
      return ch == 0 ? x.data()[r * 2 + c] : s.h.data()[r * 2 + c];
    };
    double pre[4][4];
    for (int gate = 0; gate < 4; ++gate)
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) {
          double acc = p.gate_bias.data()[gate];
          for (int ch = 0; ch < 2; ++ch)
            for (int a = 0; a < 3; ++a)
              for (int b = 0; b < 3; ++b)
                acc += p.gate_weight.data()[((gate * 2 + ch) * 3 + a) * 3 + b] * in(ch, r + a - 1, c + b - 1);
          pre[gate][r * 2 + c] = acc;
        }
    // Four groups of one channel each: normalise every gate plane on its own.
    for (int gate = 0; gate < 4; ++gate) {
      double mu = 0, var = 0;
      for (double v : pre[gate]) mu += v / 4;
      for (double v : pre[gate]) var += (v - mu) * (v - mu) / 4;
      for (double& v : pre[gate])
        v = p.gn_gamma.data()[gate] * (v - mu) / std::sqrt(var + 1e-5) + p.gn_beta.data()[gate];
    }
    for (int k = 0; k < 4; ++k) {
      const double c_next = sigmoid_ref(pre[1][k]) * s.c.data()[k] + sigmoid_ref(pre[0][k]) * std::tanh(pre[2][k]);
      const double h_next = sigmoid_ref(pre[3][k]) * std::tanh(c_next);
      CHECK(out.c.data()[k] == doctest::Approx(c_next).epsilon(1e-12));
      CHECK(out.h.data()[k] == doctest::Approx(h_next).epsilon(1e-12));
    }
  }
  SUBCASE("shape errors") {
    BasicCellParams<double> p{Tensor<double>(Shape{8, 4, 3, 3}), Tensor<double>(Shape{8}),
                              Tensor<double>(Shape{8}), Tensor<double>(Shape{8})};
    LayerState<double> s{Tensor<double>(Shape{1, 2, 3, 3}), Tensor<double>(Shape{1, 2, 3, 3})};
    CHECK_THROWS_AS(convlstm_cell_step(Tensor<double>(Shape{1, 3, 3, 3}), s, p, 4, 1e-5), ConfigError);
  }
}

TEST_CASE("encode and bridge") {
  auto cfg = ModelConfig::toy();
  cfg.use_hrrr = false;
  auto params = init_params(cfg, 5).cast_to<double>();
  std::mt19937_64 rng(6);
  auto frames = random_tensor(Shape{2, cfg.t_in, 25, 16, 16}, rng, 0, 1);
  auto enc = encode(frames, params, cfg);
  CHECK(enc.hidden_stacks[0].shape() == Shape{2, 4, 16, 8, 8});
  CHECK(enc.hidden_stacks[1].shape() == Shape{2, 4, 16, 4, 4});
  CHECK(enc.hidden_stacks[2].shape() == Shape{2, 4, 16, 2, 2});
  CHECK(enc.final_cells[2].shape() == Shape{2, 16, 2, 2});

  // Single step: identical to one explicit cell step on zero state.
  auto one = cfg;
  one.t_in = 1;
  auto enc1 = encode(time_frame(frames, 0).reshape({2, 1, 25, 16, 16}), params, one);
  auto d0 = leaky_relu(conv2d(time_frame(frames, 0), params.encoder_down[0].weight, params.encoder_down[0].bias, 2, 1), 0.2);
  LayerState<double> z{Tensor<double>(Shape{2, 16, 8, 8}), Tensor<double>(Shape{2, 16, 8, 8})};
  auto s0 = convlstm_cell_step(d0, z, params.encoder_cells[0], 4, 1e-5);
  CHECK(bit_equal(enc1.hidden_stacks[0].reshape({2, 16, 8, 8}), s0.h));

  // Zero input, zero params: all-zero states.
  auto zp = zero_params(cfg);
  auto enc0 = encode(Tensor<double>(Shape{1, cfg.t_in, 25, 16, 16}), zp, cfg);
  for (const auto& hs : enc0.hidden_stacks)
    for (double v : hs.data()) CHECK(v == 0.0);

  // Bridge.
  Tensor<double> onehot(Shape{cfg.t_in});
  onehot.mutable_data()[cfg.t_in - 1] = 1.0;
  auto last = bridge_hidden(enc.hidden_stacks[1], onehot);
  CHECK(bit_equal(last, time_frame(enc.hidden_stacks[1], cfg.t_in - 1)));

  Tensor<double> constant(Shape{1, 20, 2, 3, 3}, -0.4);
  Tensor<double> uniform(Shape{20}, 1.0 / 20);
  const auto avg = bridge_hidden(constant, uniform);
  for (double v : avg.data()) CHECK(v == doctest::Approx(-0.4).epsilon(1e-12));

  auto stack = random_tensor(Shape{1, 20, 2, 3, 3}, rng);
  auto w = random_tensor(Shape{20}, rng);
  auto bridged = bridge_hidden(stack, w);
  CHECK(bridged.shape() == Shape{1, 2, 3, 3});
  for (int k = 0; k < 18; ++k) {
    double acc = 0;
    for (int i = 0; i < 20; ++i) acc += w.data()[i] * stack.data()[i * 18 + k];
    CHECK(bridged.data()[k] == doctest::Approx(acc).epsilon(1e-13));
  }
  CHECK_THROWS_AS(bridge_hidden(stack, Tensor<double>(Shape{19})), ConfigError);
}

TEST_CASE("hrrr conditioning") {
  auto cfg = ModelConfig::toy();
  auto params = init_params(cfg, 9).cast_to<double>();
  std::mt19937_64 rng(10);
  auto frames = random_tensor(Shape{1, 3, 1, 16, 16}, rng, 0, 1);
  auto cond = hrrr_encode(frames, params, cfg);
  CHECK(cond.shape() == Shape{1, 6, 16, 2, 2});

  Tensor<double> constant(Shape{1, 3, 1, 16, 16}, 0.35);
  auto cc = hrrr_encode(constant, params, cfg);
  for (int t = 1; t < 6; ++t) CHECK(bit_equal(time_frame(cc, t), time_frame(cc, 0)));

  // K == T_o: only the convolutions apply.
  auto six = random_tensor(Shape{1, 6, 1, 16, 16}, rng, 0, 1);
  auto direct = hrrr_encode(six, params, cfg);
  Tensor<double> x = six.reshape({6, 1, 16, 16});
  for (std::size_t l = 0; l < 3; ++l)
    x = leaky_relu(conv2d(x, params.hrrr_down[l].weight, params.hrrr_down[l].bias, 2, 1), 0.2);
  CHECK(bit_equal(direct, x.reshape({1, 6, 16, 2, 2})));

  CHECK_THROWS_AS(hrrr_encode(Tensor<double>(Shape{1, 1, 1, 16, 16}), params, cfg), ConfigError);
}

TEST_CASE("forecast and forward") {
  auto cfg = ModelConfig::toy();
  auto params = init_params(cfg, 11).cast_to<double>();
  std::mt19937_64 rng(12);
  auto raw = random_tensor(Shape{1, cfg.t_in, 1, 80, 80}, rng, 0, 1);
  auto hrrr = random_tensor(Shape{1, cfg.hrrr_frames, 1, 16, 16}, rng, 0, 1);
  auto y = forward(raw, std::optional<Tensor<double>>(hrrr), params, cfg);
  CHECK(y.shape() == Shape{1, 6, 1, 16, 16});
  // Pre-stacked input gives the same result.
  auto y2 = forward(lv_stack_sequence(raw, 5), std::optional<Tensor<double>>(hrrr), params, cfg);
  CHECK(bit_equal(y, y2));
  CHECK(bit_equal(y, forward(raw, std::optional<Tensor<double>>(hrrr), params, cfg)));
  CHECK_THROWS_AS(forward(raw, std::nullopt, params, cfg), ConfigError);

  auto small = cfg;
  small.use_lv = false;
  small.use_hrrr = false;
  auto sp = init_params(small, 11).cast_to<double>();
  CHECK(sp.encoder_down[0].weight.shape() == Shape{8, 1, 3, 3});
  auto ys = forward(random_tensor(Shape{2, cfg.t_in, 1, 16, 16}, rng), std::nullopt, sp, small);
  CHECK(ys.shape() == Shape{2, 6, 1, 16, 16});

  auto single = small;
  single.t_out = 1;
  CHECK(forward(random_tensor(Shape{1, cfg.t_in, 1, 16, 16}, rng), std::nullopt, sp, single).shape() ==
        Shape{1, 1, 1, 16, 16});

  auto zp = zero_params(small);
  std::array<LayerState<double>, 3> zero_states;
  const auto sizes = small.level_sizes();
  for (std::size_t l = 0; l < 3; ++l)
    zero_states[l] = {Tensor<double>(Shape{1, 16, sizes[l], sizes[l]}), Tensor<double>(Shape{1, 16, sizes[l], sizes[l]})};
  const auto zf = forecast(zero_states, std::nullopt, zp, small);
  for (double v : zf.data()) CHECK(v == 0.0);

  std::optional<Tensor<double>> bad_cond(Tensor<double>(Shape{1, 6, 15, 2, 2}));
  CHECK_THROWS_AS(forecast(zero_states, bad_cond, zp, small), ConfigError);
}

TEST_CASE("one-hot bridge with zero conditioning reduces to the last-state forecaster") {
  auto cfg = ModelConfig::toy();
  cfg.use_hrrr = false;
  auto params = init_params(cfg, 13);
  std::mt19937_64 rng(14);
  auto frames = random_tensor<float>(Shape{1, cfg.t_in, 25, 16, 16}, rng, 0, 1);
  auto bridged = forward(frames, std::nullopt, params, cfg);

  auto enc = encode(frames, params, cfg);
  std::array<LayerState<float>, 3> last;
  for (std::size_t l = 0; l < 3; ++l) last[l] = {time_frame(enc.hidden_stacks[l], cfg.t_in - 1), enc.final_cells[l]};
  const Tensor<float> zeros(Shape{1, cfg.t_out, 16, 2, 2});
  auto direct = forecast(last, std::optional<Tensor<float>>(zeros), params, cfg);
  CHECK(bit_equal(bridged, direct));
}

TEST_CASE("full forward pass gradient probe") {
  auto cfg = ModelConfig::toy();
  std::mt19937_64 rng(16);
  auto params = init_params(cfg, 15).cast_to<double>();
  // Evaluate at a generic point: zero biases would pile pre-activations onto
  // the leaky ReLU kink, where central differences are meaningless.
  std::uniform_real_distribution<double> spread(-0.5, 0.5);
  for (auto& [name, t] : params.named()) {
    if (t.rank() == 4) continue;
    auto tt = t;
    const bool gamma = name.find("groupnorm-weight") != std::string::npos;
    for (auto& v : tt.mutable_data()) v = gamma ? 1.0 + spread(rng) : spread(rng);
  }
  auto frames = random_tensor(Shape{1, cfg.t_in, 25, 16, 16}, rng, 0, 1);
  auto hrrr = random_tensor(Shape{1, cfg.hrrr_frames, 1, 16, 16}, rng, 0, 1);
  auto target = random_tensor(Shape{1, cfg.t_out, 1, 16, 16}, rng, 0, 1);
  auto r = random_tensor(Shape{1, cfg.t_out, 1, 16, 16}, rng);

  // 16 entries drawn uniformly over all parameter entries.
  const auto named = params.named();
  std::vector<std::size_t> cumulative;
  std::size_t total = 0;
  for (const auto& [name, t] : named) cumulative.push_back(total += t.numel());
  std::vector<GradProbe> probes;
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  while (probes.size() < 16) {
    const std::size_t e = pick(rng);
    std::size_t ti = 0;
    while (cumulative[ti] <= e) ++ti;
    probes.push_back({named[ti].second, e - (ti ? cumulative[ti - 1] : 0)});
  }
  auto loss = [&] {
    auto y = forward(frames, std::optional<Tensor<double>>(hrrr), params, cfg);
    return sum(mul(sub(y, target), r));
  };
  auto report = finite_diff_check(loss, probes, 1e-4);
  INFO("max rel error " << report.max_rel_error);
  CHECK(report.passed);
}
