#include "doctest.h"

#include <random>

#include "nowcast/baselines.hpp"
#include "nowcast/data.hpp"
#include "nowcast/metrics.hpp"
#include "test_support.hpp"

using namespace nowcast;
using nowcast::testing::bit_equal;
using nowcast::testing::random_tensor;

namespace {

Tensor<float> frame(const Tensor<float>& seq, std::int64_t t) {
  const auto& s = seq.shape();
  const std::int64_t plane = s[1] * s[2];
  return Tensor<float>({s[1], s[2]}, std::vector<float>(seq.data().begin() + t * plane, seq.data().begin() + (t + 1) * plane));
}

// Smooth texture: random field blurred by repeated 3x3 box averaging.
Tensor<float> texture(std::int64_t n, std::uint64_t seed, int passes = 3) {
  std::mt19937_64 rng(seed);
  auto t = random_tensor<float>({n, n}, rng, 0, 60);
  for (int pass = 0; pass < passes; ++pass) {
    Tensor<float> next = t.clone();
    for (std::int64_t y = 0; y < n; ++y)
      for (std::int64_t x = 0; x < n; ++x) {
        double s = 0;
        int c = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const auto yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= n || xx >= n) continue;
            s += t.data()[yy * n + xx];
            ++c;
          }
        next.mutable_data()[y * n + x] = static_cast<float>(s / c);
      }
    t = next;
  }
  return t;
}

// out(x, y) = in(x - dx, y - dy), zero where the source is outside.
Tensor<float> shifted(const Tensor<float>& in, int dx, int dy) {
  const auto n = in.shape()[0];
  Tensor<float> out = Tensor<float>::zeros(in.shape());
  for (std::int64_t y = 0; y < n; ++y)
    for (std::int64_t x = 0; x < n; ++x) {
      const auto sx = x - dx, sy = y - dy;
      if (sx >= 0 && sy >= 0 && sx < n && sy < n) out.mutable_data()[y * n + x] = in.data()[sy * n + sx];
    }
  return out;
}

double interior_max_abs(const Tensor<float>& t, std::int64_t margin) {
  const auto n = t.shape()[0];
  double m = 0;
  for (std::int64_t y = margin; y < n - margin; ++y)
    for (std::int64_t x = margin; x < n - margin; ++x) m = std::max(m, double(std::abs(t.data()[y * n + x])));
  return m;
}

}  // namespace

TEST_CASE("persistence") {
  std::mt19937_64 rng(1);
  const auto f = random_tensor<float>({5, 5}, rng, 0, 50);
  const auto p = persistence_forecast(f, 4);
  REQUIRE(p.shape() == Shape{4, 5, 5});
  for (std::int64_t k = 0; k < 4; ++k) CHECK(bit_equal(frame(p, k), f));

  SyntheticConfig g;
  g.side = 32;
  g.frames = 8;
  g.cells = 3;
  g.velocity_u = 1.0;
  g.velocity_v = 0.5;
  const auto seq = gen_synthetic_sequence(g).frames;
  const auto fc = persistence_forecast(frame(seq, 1), 6);
  double prev = 0;
  for (std::int64_t k = 0; k < 6; ++k) {
    const double mae = pointwise_errors(frame(fc, k), frame(seq, k + 2)).mae;
    CHECK(mae > prev);
    prev = mae;
  }
}

TEST_CASE("flow estimation") {
  const auto tex = texture(48, 2);
  SUBCASE("identical frames give zero flow") {
    const auto flow = estimate_flow(tex, tex, 3, 11);
    CHECK(interior_max_abs(flow.u, 0) <= 0.05);
    CHECK(interior_max_abs(flow.v, 0) <= 0.05);
  }
  SUBCASE("constant frames give exactly zero flow") {
    const Tensor<float> c({20, 20}, 30.0f);
    const auto flow = estimate_flow(c, c, 2, 7);
    CHECK(interior_max_abs(flow.u, 0) == 0.0);
    CHECK(interior_max_abs(flow.v, 0) == 0.0);
  }
  SUBCASE("integer shift (2, 0)") {
    const auto flow = estimate_flow(tex, shifted(tex, 2, 0), 3, 11);
    const auto n = 48;
    double worst_u = 0, worst_v = 0;
    for (int y = 8; y < n - 8; ++y)
      for (int x = 8; x < n - 8; ++x) {
        worst_u = std::max(worst_u, std::abs(flow.u.data()[y * n + x] - 2.0));
        worst_v = std::max(worst_v, double(std::abs(flow.v.data()[y * n + x])));
      }
    CHECK(worst_u <= 0.25);
    CHECK(worst_v <= 0.25);
  }
  SUBCASE("diagonal shift (-1, 3)") {
    // Longer shift, so the texture must stay coherent at the coarsest level.
    const auto smooth = texture(48, 2, 8);
    const auto flow = estimate_flow(smooth, shifted(smooth, -1, 3), 3, 11);
    const auto n = 48;
    for (int y = 10; y < n - 10; y += 3)
      for (int x = 10; x < n - 10; x += 3) {
        CHECK(flow.u.data()[y * n + x] == doctest::Approx(-1.0).epsilon(0.25));
        CHECK(flow.v.data()[y * n + x] == doctest::Approx(3.0).epsilon(0.1));
      }
  }
}

TEST_CASE("advection") {
  const auto tex = texture(24, 3);
  const FlowField zero{Tensor<float>::zeros({24, 24}), Tensor<float>::zeros({24, 24})};
  CHECK(bit_equal(advect(tex, zero), tex));

  std::mt19937_64 rng(4);
  FlowField wild{random_tensor<float>({24, 24}, rng, -3, 3), random_tensor<float>({24, 24}, rng, -3, 3)};
  const auto out = advect(tex, wild);
  const auto [lo, hi] = std::minmax_element(tex.data().begin(), tex.data().end());
  for (float v : out.data()) {
    CHECK(v >= std::min(0.0f, *lo));
    CHECK(v <= *hi + 1e-4f);
  }

  const auto doubled = scale_flow(wild, 2.0);
  for (std::size_t i = 0; i < wild.u.numel(); ++i) {
    CHECK(doubled.u.data()[i] == 2.0f * wild.u.data()[i]);
    CHECK(doubled.v.data()[i] == 2.0f * wild.v.data()[i]);
  }
}

TEST_CASE("optical flow forecast") {
  SUBCASE("zero motion is persistence") {
    const auto tex = texture(32, 5);
    const auto fc = optical_flow_forecast(tex, tex, 4);
    for (std::int64_t k = 0; k < 4; ++k) CHECK(bit_equal(frame(fc, k), tex));
  }
  SUBCASE("translation scene") {
    SyntheticConfig g;
    g.side = 64;
    g.frames = 8;
    g.cells = 4;
    g.velocity_u = 2.0;
    g.velocity_v = -1.0;
    g.seed = 7;
    const auto seq = gen_synthetic_sequence(g).frames;
    float peak = 0;
    for (float v : seq.data()) peak = std::max(peak, v);
    const auto fc = optical_flow_forecast(frame(seq, 3), frame(seq, 4), 3);
    for (std::int64_t k = 0; k < 3; ++k) {
      const auto err = center_crop(frame(fc, k), 40);
      const auto truth = center_crop(frame(seq, 5 + k), 40);
      CHECK(pointwise_errors(err, truth).mae <= 1e-2 * peak);
    }
  }
  SUBCASE("cadence ratio doubles the step") {
    SyntheticConfig g;
    g.side = 64;
    g.frames = 10;
    g.cells = 4;
    g.velocity_u = 1.0;
    g.seed = 8;
    const auto seq = gen_synthetic_sequence(g).frames;
    const auto fc = optical_flow_forecast(frame(seq, 3), frame(seq, 4), 2, 2.0);
    float peak = 0;
    for (float v : seq.data()) peak = std::max(peak, v);
    CHECK(pointwise_errors(center_crop(frame(fc, 0), 40), center_crop(frame(seq, 6), 40)).mae <= 1e-2 * peak);
    CHECK(pointwise_errors(center_crop(frame(fc, 1), 40), center_crop(frame(seq, 8), 40)).mae <= 1e-2 * peak);
  }
  SUBCASE("advection does not create mass in a growing scene") {
    SyntheticConfig g;
    g.side = 64;
    g.frames = 6;
    g.cells = 1;
    g.width_min = 4;
    g.width_max = 5;
    g.growth_min = g.growth_max = 0.1;
    g.velocity_u = 1.0;
    g.spawn_margin = 0.0;
    g.seed = 3;
    const auto seq = gen_synthetic_sequence(g).frames;
    auto mass = [](const Tensor<float>& f) {
      double m = 0;
      for (float v : f.data()) m += v;
      return m;
    };
    const auto fc = optical_flow_forecast(frame(seq, 0), frame(seq, 1), 3);
    const double m1 = mass(frame(seq, 1));
    for (std::int64_t k = 0; k < 3; ++k) {
      CHECK(mass(frame(fc, k)) == doctest::Approx(m1).epsilon(0.02));
      CHECK(mass(frame(seq, 2 + k)) > 1.1 * m1);
    }
  }
}
