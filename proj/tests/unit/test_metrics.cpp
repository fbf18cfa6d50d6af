#include "doctest.h"

#include <cmath>
#include <random>

#include "nowcast/errors.hpp"
#include "nowcast/metrics.hpp"
#include "test_support.hpp"

using namespace nowcast;
using nowcast::testing::random_tensor;

namespace {

Tensor<float> plane(std::int64_t h, std::int64_t w, std::vector<float> v) { return Tensor<float>({h, w}, std::move(v)); }

Tensor<float> offset(const Tensor<float>& t, float c) {
  Tensor<float> out = t.clone();
  for (auto& v : out.mutable_data()) v += c;
  return out;
}

// Brute-force single-scale SSIM terms with an explicit 2-D window.
std::pair<double, double> brute_ssim(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                                     double range) {
  double g[11], total = 0;
  for (int i = 0; i < 11; ++i) total += g[i] = std::exp(-(i - 5.0) * (i - 5.0) / 4.5);
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  double ssim = 0, cs = 0;
  int count = 0;
  for (int y = 0; y + 11 <= h; ++y)
    for (int x = 0; x + 11 <= w; ++x) {
      double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wt = g[i] * g[j] / (total * total);
          const double va = a[(y + i) * w + x + j], vb = b[(y + i) * w + x + j];
          ma += wt * va;
          mb += wt * vb;
          aa += wt * va * va;
          bb += wt * vb * vb;
          ab += wt * va * vb;
        }
      const double sa = aa - ma * ma, sb = bb - mb * mb, sab = ab - ma * mb;
      const double c = (2 * sab + c2) / (sa + sb + c2);
      ssim += c * (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
      cs += c;
      ++count;
    }
  return {ssim / count, cs / count};
}

std::vector<double> halve(const std::vector<double>& v, int h, int w) {
  std::vector<double> out;
  for (int y = 0; y < h / 2; ++y)
    for (int x = 0; x < w / 2; ++x)
      out.push_back((v[2 * y * w + 2 * x] + v[2 * y * w + 2 * x + 1] + v[(2 * y + 1) * w + 2 * x] +
                     v[(2 * y + 1) * w + 2 * x + 1]) / 4);
  return out;
}

}  // namespace

TEST_CASE("pointwise errors") {
  std::mt19937_64 rng(1);
  const auto t = random_tensor<float>({3, 5}, rng, 0, 60);
  const auto same = pointwise_errors(t, t);
  CHECK(same.mae == 0);
  CHECK(same.mse == 0);
  CHECK(same.bias == 0);
  const auto up = pointwise_errors(plane(1, 2, {3, 5}), plane(1, 2, {1, 3}));
  CHECK(up.mae == 2.0);
  CHECK(up.mse == 4.0);
  CHECK(up.bias == 2.0);
  const auto anti = pointwise_errors(plane(1, 2, {13, 7}), plane(1, 2, {10, 10}));
  CHECK(anti.bias == 0.0);
  CHECK(anti.mae == 3.0);
  CHECK_THROWS_AS(pointwise_errors(plane(1, 2, {1, 2}), plane(2, 1, {1, 2})), ConfigError);
}

TEST_CASE("F1 at threshold") {
  const auto pred = plane(2, 2, {15, 5, 13, 2});
  const auto truth = plane(2, 2, {15, 15, 5, 2});
  CHECK(std::abs(f1_at_threshold(pred, truth, 12) - 0.5) <= 1e-9);
  CHECK(f1_at_threshold(truth, truth, 12) == 1.0);
  CHECK(f1_at_threshold(plane(1, 2, {1, 2}), plane(1, 2, {3, 4}), 12) == 1.0);
  CHECK(f1_at_threshold(plane(1, 2, {1, 2}), plane(1, 2, {30, 4}), 12) == 0.0);
  CHECK(f1_at_threshold(plane(1, 2, {30, 2}), plane(1, 2, {1, 4}), 12) == 0.0);
  // 18: pred {20,..} vs truth {19, 25}: TP 1, FN 1
  CHECK(f1_at_threshold(plane(1, 2, {20, 10}), plane(1, 2, {19, 25}), 18) == doctest::Approx(2.0 / 3.0));
  CHECK(f1_at_threshold(plane(1, 2, {20, 10}), plane(1, 2, {19, 25}), 23) == 0.0);

  // Strictly monotone map applied to everything leaves F1 unchanged.
  std::mt19937_64 rng(2);
  const auto a = random_tensor<float>({8, 8}, rng, 0, 50), b = random_tensor<float>({8, 8}, rng, 0, 50);
  Tensor<float> fa = a.clone(), fb = b.clone();
  for (auto& v : fa.mutable_data()) v = 2 * v + 1;
  for (auto& v : fb.mutable_data()) v = 2 * v + 1;
  for (double thr : {12.0, 18.0, 23.0}) CHECK(f1_at_threshold(a, b, thr) == f1_at_threshold(fa, fb, 2 * thr + 1));
}

TEST_CASE("PSNR") {
  std::mt19937_64 rng(3);
  // Integer dBZ values keep the offsets below exact in float.
  auto t = random_tensor<float>({6, 6}, rng, 0, 50);
  for (auto& v : t.mutable_data()) v = std::floor(v);
  CHECK(psnr(t, t) == 100.0);
  CHECK(std::abs(psnr(offset(t, 7.0f), t, 70.0) - 20.0) <= 1e-9);
  CHECK(std::abs(psnr(offset(t, 70.0f), t, 70.0)) <= 1e-9);
  CHECK(psnr(offset(t, 3.0f), t) > psnr(offset(t, 4.0f), t));
  CHECK_THROWS_AS(psnr(t, t, 0.0), ConfigError);
}

TEST_CASE("MS-SSIM") {
  CHECK(ms_ssim_scales(10) == 0);
  CHECK(ms_ssim_scales(16) == 1);
  CHECK(ms_ssim_scales(22) == 2);
  CHECK(ms_ssim_scales(88) == 4);
  CHECK(ms_ssim_scales(176) == 5);
  CHECK(ms_ssim_scales(1024) == 5);

  std::mt19937_64 rng(4);
  for (std::int64_t side : {16, 40, 176}) {
    const auto a = random_tensor<float>({side, side}, rng, 0, 60);
    CHECK(std::abs(ms_ssim(a, a) - 1.0) <= 1e-6);
    const auto b = random_tensor<float>({side, side}, rng, 0, 60);
    CHECK(ms_ssim(a, b) == ms_ssim(b, a));
    CHECK(ms_ssim(a, b) < 1.0);
  }

  SUBCASE("flat patches, luminance term by hand") {
    const Tensor<float> a({11, 11}, 10.0f), b({11, 11}, 80.0f);
    const double c1 = 0.49;
    const double want = (2 * 10.0 * 80.0 + c1) / (100.0 + 6400.0 + c1);
    CHECK(ms_ssim(a, b) == doctest::Approx(want).epsilon(1e-9));
    CHECK(ms_ssim(a, b) < 0.3);
  }
  SUBCASE("large uniform offset collapses the score") {
    const auto a = random_tensor<float>({32, 32}, rng, 0, 10);
    CHECK(ms_ssim(offset(a, 70.0f), a) < 0.5);
  }
  SUBCASE("brute-force oracle, one and two scales") {
    for (int side : {13, 24}) {
      const auto a = random_tensor<float>({side, side}, rng, 0, 60);
      const auto b = random_tensor<float>({side, side}, rng, 0, 60);
      std::vector<double> va(a.data().begin(), a.data().end()), vb(b.data().begin(), b.data().end());
      double want;
      if (side == 13) {
        want = std::max(0.0, brute_ssim(va, vb, side, side, 70).first);
      } else {
        const double w0 = 0.0448 / (0.0448 + 0.2856), w1 = 0.2856 / (0.0448 + 0.2856);
        const auto s0 = brute_ssim(va, vb, side, side, 70);
        const auto s1 = brute_ssim(halve(va, side, side), halve(vb, side, side), side / 2, side / 2, 70);
        want = std::pow(std::max(0.0, s0.second), w0) * std::pow(std::max(0.0, s1.first), w1);
      }
      CHECK(ms_ssim(a, b) == doctest::Approx(want).epsilon(1e-9));
    }
  }
  CHECK_THROWS_AS(ms_ssim(Tensor<float>({8, 8}), Tensor<float>({8, 8})), ConfigError);
}

TEST_CASE("evaluate_run") {
  std::mt19937_64 rng(5);
  SUBCASE("single sample, single lead equals the direct call") {
    const auto p = random_tensor<float>({1, 16, 16}, rng, 0, 50), t = random_tensor<float>({1, 16, 16}, rng, 0, 50);
    const auto rep = evaluate_run({p}, {t}, {8});
    const auto direct = frame_metrics(p.reshape({16, 16}), t.reshape({16, 16}));
    CHECK(rep.rows.size() == 1);
    CHECK(rep.rows[0].mae == direct.mae);
    CHECK(rep.rows[0].f1_12 == direct.f1_12);
    CHECK(rep.rows[0].ms_ssim == direct.ms_ssim);
    CHECK(rep.rows[0].psnr == direct.psnr);
    CHECK(rep.agg_0_2h.mae == direct.mae);
  }
  SUBCASE("aggregates reproduce a flattened recomputation") {
    const std::vector<int> leads{40, 80, 120, 160, 240};
    std::vector<Tensor<float>> preds, truths;
    for (int i = 0; i < 3; ++i) {
      preds.push_back(random_tensor<float>({5, 16, 16}, rng, 0, 50));
      truths.push_back(random_tensor<float>({5, 16, 16}, rng, 0, 50));
    }
    const auto rep = evaluate_run(preds, truths, leads);
    double mae_2h = 0, mae_6h = 0, ssim_6h = 0, f1_2h = 0;
    int n2 = 0, n6 = 0;
    for (int k = 0; k < 5; ++k)
      for (int i = 0; i < 3; ++i) {
        std::vector<float> pv(preds[i].data().begin() + k * 256, preds[i].data().begin() + (k + 1) * 256);
        std::vector<float> tv(truths[i].data().begin() + k * 256, truths[i].data().begin() + (k + 1) * 256);
        const auto m = frame_metrics(plane(16, 16, pv), plane(16, 16, tv));
        mae_6h += m.mae;
        ssim_6h += m.ms_ssim;
        ++n6;
        if (leads[k] <= 120) {
          mae_2h += m.mae;
          f1_2h += m.f1_12;
          ++n2;
        }
      }
    CHECK(rep.agg_0_6h.mae == mae_6h / n6);
    CHECK(rep.agg_0_6h.ms_ssim == ssim_6h / n6);
    CHECK(rep.agg_0_2h.mae == mae_2h / n2);
    CHECK(rep.agg_0_2h.f1_12 == f1_2h / n2);
    double row_mean = 0;
    for (const auto& r : rep.rows) row_mean += r.mae;
    CHECK(rep.agg_0_6h.mae == doctest::Approx(row_mean / 5).epsilon(1e-12));

    const auto parsed = MetricsReport::from_csv(rep.to_csv());
    CHECK(parsed.lead_minutes == leads);
    CHECK(parsed.agg_0_2h.mae == rep.agg_0_2h.mae);
    CHECK(parsed.rows[3].psnr == rep.rows[3].psnr);
  }
  SUBCASE("static persistence") {
    const auto frame = random_tensor<float>({1, 16, 16}, rng, 0, 50);
    std::vector<float> rep3;
    for (int k = 0; k < 3; ++k) rep3.insert(rep3.end(), frame.data().begin(), frame.data().end());
    const Tensor<float> seq({3, 16, 16}, rep3);
    const auto rep = evaluate_run({seq}, {seq}, {10, 20, 30});
    for (const auto& r : rep.rows) {
      CHECK(r.mae == 0.0);
      CHECK(r.f1_12 == 1.0);
      CHECK(r.f1_23 == 1.0);
    }
  }
  SUBCASE("misaligned lead grid") {
    const auto p = random_tensor<float>({2, 16, 16}, rng);
    CHECK_THROWS_AS(evaluate_run({p}, {p}, {10, 20, 30}), ConfigError);
    CHECK_THROWS_AS(evaluate_run({p}, {p}, {20, 10}), ConfigError);
  }
}
