#include "doctest.h"

#include <cmath>
#include <random>

#include "nowcast/autodiff.hpp"
#include "nowcast/errors.hpp"
#include "nowcast/gradcheck.hpp"
#include "nowcast/pipeline.hpp"
#include "nowcast/training.hpp"
#include "test_support.hpp"

using namespace nowcast;
using nowcast::testing::bit_equal;
using nowcast::testing::random_tensor;

namespace {

std::vector<TrainingSample> toy_samples(const ModelConfig& cfg, int sequences, std::uint64_t seed) {
  std::vector<DatasetWindow> windows;
  for (int s = 0; s < sequences; ++s) {
    SyntheticConfig g;
    g.side = cfg.input_side();
    g.frames = cfg.t_in + cfg.t_out;
    g.cadence_minutes = 1;
    g.cells = 6;
    g.velocity_u = 1.0;
    g.seed = seed + static_cast<std::uint64_t>(s);
    auto w = window_dataset(gen_synthetic_sequence(g), WindowConfig{cfg.t_in, cfg.t_out, 1, 1, 1, cfg.target_size});
    windows.insert(windows.end(), w.begin(), w.end());
  }
  SurrogateConfig sc;
  sc.frames = cfg.hrrr_frames;
  attach_surrogates(windows, sc);
  return make_samples(windows, cfg);
}

}  // namespace

TEST_CASE("B-MAE pixel weights") {
  const Tensor<float> truth({6}, std::vector<float>{15, 5, 12, 18, 22.9f, 40});
  const auto w = bmae_pixel_weights(truth, {12, 18, 23}, {1, 2, 5, 10});
  CHECK(w.data()[0] == 2.0f);
  CHECK(w.data()[1] == 1.0f);
  CHECK(w.data()[2] == 2.0f);  // a breakpoint belongs to the bin above it
  CHECK(w.data()[3] == 5.0f);
  CHECK(w.data()[4] == 5.0f);
  CHECK(w.data()[5] == 10.0f);
  const auto flat = bmae_pixel_weights(truth, {}, {1.0});
  for (float v : flat.data()) CHECK(v == 1.0f);
  CHECK_THROWS_AS(bmae_pixel_weights(truth, {18, 12}, {1, 2, 3}), ConfigError);
  CHECK_THROWS_AS(bmae_pixel_weights(truth, {12}, {1, 2, 3}), ConfigError);
}

TEST_CASE("weighted MAE+MSE loss") {
  std::mt19937_64 rng(1);
  const auto t = random_tensor<double>({2, 3, 4}, rng);
  const Tensor<double> ones(t.shape(), 1.0), twos(t.shape(), 2.0);
  CHECK(weighted_mae_mse_loss(t, t, ones).item() == 0.0);
  Tensor<double> up = t.clone();
  for (auto& v : up.mutable_data()) v += 2.0;
  CHECK(weighted_mae_mse_loss(up, t, ones).item() == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(weighted_mae_mse_loss(up, t, twos).item() == doctest::Approx(6.0).epsilon(1e-12));
  const auto p = random_tensor<double>(t.shape(), rng);
  CHECK(weighted_mae_mse_loss(p, t, ones).item() >= 0.0);
  CHECK_THROWS_AS(weighted_mae_mse_loss(p, Tensor<double>({3}), Tensor<double>({3})), ConfigError);

  // Analytic gradient against central differences (pred stays away from the |d| kink).
  auto pred = random_tensor<double>(t.shape(), rng);
  pred.set_requires_grad(true);
  const auto w = random_tensor<double>(t.shape(), rng, 0.5, 3.0);
  const auto rep = finite_diff_check([&](const Tensor<double>& x) { return weighted_mae_mse_loss(x, t, w); }, pred, 1e-6);
  CHECK(rep.passed);
}

TEST_CASE("global norm clipping") {
  Tensor<double> g({2});
  g.set_requires_grad(true);
  g.mutable_grad()[0] = 3.0;
  g.mutable_grad()[1] = 4.0;
  std::vector<Tensor<double>> ps{g};
  CHECK(clip_global_norm(ps, 1.0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(g.grad()[0] == doctest::Approx(0.6));
  CHECK(global_grad_norm(ps) <= 1.0 + 1e-12);

  g.mutable_grad()[0] = 0.3;
  g.mutable_grad()[1] = 0.4;
  CHECK(clip_global_norm(ps, 1.0) == 1.0);
  CHECK(g.grad()[1] == 0.4);

  g.mutable_grad()[0] = 0.0;
  g.mutable_grad()[1] = 0.0;
  CHECK(clip_global_norm(ps, 1.0) == 1.0);

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor<double>> many;
    for (int k = 0; k < 4; ++k) {
      auto t = random_tensor<double>({5}, rng);
      t.set_requires_grad(true);
      for (auto& v : t.mutable_grad()) v = std::uniform_real_distribution<double>(-10, 10)(rng);
      many.push_back(t);
    }
    const double before = global_grad_norm(many);
    clip_global_norm(many, 1.0);
    CHECK(global_grad_norm(many) <= 1.0 + 1e-6);
    CHECK(global_grad_norm(many) <= before + 1e-12);
  }
  CHECK_THROWS_AS(clip_global_norm(ps, 0.0), ConfigError);
}

TEST_CASE("Adam closed form") {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.weight_decay = 0.0;

  SUBCASE("first step moves by lr * g / (|g| + eps)") {
    Tensor<double> theta({1}, std::vector<double>{0.7});
    theta.set_requires_grad(true);
    theta.mutable_grad()[0] = 0.3;
    std::vector<Tensor<double>> ps{theta};
    auto state = OptimizerState<double>::init(ps);
    adam_step(ps, state, cfg);
    CHECK(std::abs(theta.data()[0] - (0.7 - 0.01 * 0.3 / (0.3 + 1e-8))) <= 1e-10);
    CHECK(state.step == 1);
  }
  SUBCASE("two steps with coupled weight decay") {
    cfg.weight_decay = 0.1;
    Tensor<double> theta({1}, std::vector<double>{-0.4});
    theta.set_requires_grad(true);
    std::vector<Tensor<double>> ps{theta};
    auto state = OptimizerState<double>::init(ps);
    // straight-line oracle
    double th = -0.4, m = 0, v = 0;
    const double grads[2] = {0.25, -1.5};
    for (int t = 1; t <= 2; ++t) {
      theta.mutable_grad()[0] = grads[t - 1];
      adam_step(ps, state, cfg);
      const double g = grads[t - 1] + 0.1 * th;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      th -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      CHECK(std::abs(theta.data()[0] - th) <= 1e-10);
    }
  }
  SUBCASE("zero gradient, zero decay leaves params alone") {
    std::mt19937_64 rng(3);
    auto theta = random_tensor<double>({4}, rng);
    const auto before = theta.clone();
    theta.set_requires_grad(true);
    theta.mutable_grad();
    std::vector<Tensor<double>> ps{theta};
    auto state = OptimizerState<double>::init(ps);
    adam_step(ps, state, cfg);
    CHECK(bit_equal(theta, before));
  }
}

TEST_CASE("stochastic weight averaging") {
  std::mt19937_64 rng(4);
  auto theta = random_tensor<double>({3}, rng);
  std::vector<Tensor<double>> ps{theta};
  auto state = OptimizerState<double>::init(ps);
  CHECK_THROWS_AS(swa_finalize(state, ps), ConfigError);
  swa_update(state, ps);
  swa_update(state, ps);
  CHECK(bit_equal(swa_finalize(state, ps)[0], theta));

  auto s2 = OptimizerState<double>::init(ps);
  Tensor<double> z({3}, 0.0), two({3}, 2.0);
  swa_update(s2, std::vector<Tensor<double>>{z});
  swa_update(s2, std::vector<Tensor<double>>{two});
  const auto mid = swa_finalize(s2, ps);
  for (double x : mid[0].data()) CHECK(x == 1.0);

  auto s3 = OptimizerState<double>::init(ps);
  std::vector<double> sum(3, 0.0);
  for (int k = 0; k < 7; ++k) {
    auto snap = random_tensor<double>({3}, rng);
    for (int i = 0; i < 3; ++i) sum[i] += snap.data()[i];
    swa_update(s3, std::vector<Tensor<double>>{snap});
  }
  const auto avg = swa_finalize(s3, ps)[0];
  for (int i = 0; i < 3; ++i) CHECK(std::abs(avg.data()[i] - sum[i] / 7) <= 1e-6);
  CHECK(!bit_equal(avg, theta));  // live params untouched, result is a fresh tensor
}

TEST_CASE("batch schedule") {
  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.total_steps = 4;
  const auto a = batch_schedule(5, cfg), b = batch_schedule(5, cfg);
  CHECK(a == b);
  std::vector<int> seen(5, 0);
  // First 5 draws form one permutation.
  for (int k = 0; k < 5; ++k) seen[a[k / 3][k % 3]]++;
  for (int c : seen) CHECK(c == 1);
}

TEST_CASE("train_loop") {
  auto cfg = ModelConfig::toy();
  apply_variant(cfg, Variant::hrrr_lv);
  const auto params = init_params(cfg, 3);

  SUBCASE("lr = 0 freezes parameters and the loss") {
    const auto data = toy_samples(cfg, 1, 10);
    REQUIRE(data.size() == 1);
    TrainConfig tc;
    tc.learning_rate = 0.0;
    tc.batch_size = 1;
    tc.total_steps = 3;
    const auto res = train_loop(params, cfg, data, tc);
    for (const auto& r : res.trace) CHECK(r.raw == res.trace[0].raw);
    const auto a = params.named(), b = res.params.named();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(bit_equal(a[i].second, b[i].second));
  }
  SUBCASE("same seed, same trace; SWA present") {
    const auto data = toy_samples(cfg, 3, 20);
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.batch_size = 2;
    tc.total_steps = 4;
    const auto r1 = train_loop(params, cfg, data, tc);
    const auto r2 = train_loop(params, cfg, data, tc);
    REQUIRE(r1.trace.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(r1.trace[i].raw == r2.trace[i].raw);
    CHECK(r1.trace[3].smoothed == doctest::Approx((r1.trace[0].raw + r1.trace[1].raw + r1.trace[2].raw + r1.trace[3].raw) / 4));
    REQUIRE(r1.swa_params.has_value());
    CHECK(loss_trace_csv(r1.trace).rfind("step,raw_loss,smoothed_loss\n0,", 0) == 0);
    // Training must not touch the caller's parameters.
    const auto a = params.named(), b = init_params(cfg, 3).named();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(bit_equal(a[i].second, b[i].second));
  }
  SUBCASE("non-finite loss aborts") {
    auto data = toy_samples(cfg, 1, 30);
    data[0].target.mutable_data()[0] = std::nanf("");
    TrainConfig tc;
    tc.batch_size = 1;
    tc.total_steps = 2;
    CHECK_THROWS_AS(train_loop(params, cfg, data, tc), NumericError);
  }
}
