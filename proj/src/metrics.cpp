#include "nowcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "nowcast/errors.hpp"

namespace nowcast {

namespace {

void require_same(const Tensor<float>& a, const Tensor<float>& b, const char* who) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(who) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  if (a.numel() == 0) throw ConfigError(std::string(who) + ": empty input");
}

using Plane = std::vector<double>;

// Valid-mode separable Gaussian filter, 11 taps, sigma 1.5.
Plane filter_valid(const Plane& img, std::int64_t h, std::int64_t w, const std::vector<double>& k) {
  const auto n = static_cast<std::int64_t>(k.size());
  const std::int64_t ow = w - n + 1, oh = h - n + 1;
  Plane tmp(static_cast<std::size_t>(h * ow));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::int64_t i = 0; i < n; ++i) s += k[i] * img[y * w + x + i];
      tmp[y * ow + x] = s;
    }
  Plane out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y = 0; y < oh; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::int64_t i = 0; i < n; ++i) s += k[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

const std::vector<double>& ssim_window() {
  static const std::vector<double> k = [] {
    std::vector<double> v(11);
    double total = 0.0;
    for (int i = 0; i < 11; ++i) {
      const double d = i - 5;
      v[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      total += v[i];
    }
    for (auto& x : v) x /= total;
    return v;
  }();
  return k;
}

// Mean luminance*contrast*structure and mean contrast*structure terms of one scale.
std::pair<double, double> ssim_terms(const Plane& a, const Plane& b, std::int64_t h, std::int64_t w, double c1,
                                     double c2) {
  const auto& k = ssim_window();
  Plane aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const Plane mu_a = filter_valid(a, h, w, k), mu_b = filter_valid(b, h, w, k);
  const Plane e_aa = filter_valid(aa, h, w, k), e_bb = filter_valid(bb, h, w, k), e_ab = filter_valid(ab, h, w, k);
  double ssim_sum = 0.0, cs_sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
    const double cs = (2.0 * cov + c2) / (va + vb + c2);
    const double l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    cs_sum += cs;
    ssim_sum += l * cs;
  }
  const auto n = static_cast<double>(mu_a.size());
  return {ssim_sum / n, cs_sum / n};
}

Plane downsample2(const Plane& img, std::int64_t h, std::int64_t w) {
  const std::int64_t oh = h / 2, ow = w / 2;
  Plane out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y = 0; y < oh; ++y)
    for (std::int64_t x = 0; x < ow; ++x)
      out[y * ow + x] = 0.25 * (img[(2 * y) * w + 2 * x] + img[(2 * y) * w + 2 * x + 1] +
                                img[(2 * y + 1) * w + 2 * x] + img[(2 * y + 1) * w + 2 * x + 1]);
  return out;
}

double ms_ssim_plane(Plane a, Plane b, std::int64_t h, std::int64_t w, double data_range) {
  static constexpr double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  const int scales = ms_ssim_scales(std::min(h, w));
  double total_w = 0.0;
  for (int j = 0; j < scales; ++j) total_w += kWeights[j];
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  double result = 1.0;
  for (int j = 0; j < scales; ++j) {
    const auto [ssim, cs] = ssim_terms(a, b, h, w, c1, c2);
    const double term = j + 1 == scales ? ssim : cs;
    result *= std::pow(std::max(term, 0.0), kWeights[j] / total_w);
    if (j + 1 < scales) {
      a = downsample2(a, h, w);
      b = downsample2(b, h, w);
      h /= 2;
      w /= 2;
    }
  }
  return result;
}

}  // namespace

PointwiseErrors pointwise_errors(const Tensor<float>& pred, const Tensor<float>& truth) {
  require_same(pred, truth, "pointwise_errors");
  const auto p = pred.data(), t = truth.data();
  double abs_sum = 0.0, sq_sum = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    abs_sum += std::abs(d);
    sq_sum += d * d;
    sum += d;
  }
  const auto n = static_cast<double>(p.size());
  return {abs_sum / n, sq_sum / n, sum / n};
}

double f1_at_threshold(const Tensor<float>& pred, const Tensor<float>& truth, double threshold_dbz) {
  require_same(pred, truth, "f1_at_threshold");
  const auto p = pred.data(), t = truth.data();
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool hp = p[i] >= threshold_dbz, ht = t[i] >= threshold_dbz;
    tp += hp && ht;
    fp += hp && !ht;
    fn += !hp && ht;
  }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

double psnr(const Tensor<float>& pred, const Tensor<float>& truth, double data_range, double cap) {
  if (!(data_range > 0)) throw ConfigError("psnr data_range must be positive");
  const double mse = pointwise_errors(pred, truth).mse;
  if (mse == 0.0) return cap;
  return std::min(cap, 10.0 * std::log10(data_range * data_range / mse));
}

int ms_ssim_scales(std::int64_t side) {
  int m = 0;
  while (m < 5 && (side >> m) >= 11) ++m;
  return m;
}

double ms_ssim(const Tensor<float>& pred, const Tensor<float>& truth, double data_range) {
  require_same(pred, truth, "ms_ssim");
  if (pred.rank() < 2) throw ConfigError("ms_ssim needs [..., H, W]");
  const auto& s = pred.shape();
  const std::int64_t h = s[s.size() - 2], w = s[s.size() - 1];
  if (ms_ssim_scales(std::min(h, w)) == 0)
    throw ConfigError("ms_ssim needs images at least 11 pixels on a side");
  const std::int64_t planes = pred.numel() / (h * w);
  const auto p = pred.data(), t = truth.data();
  double total = 0.0;
  for (std::int64_t k = 0; k < planes; ++k) {
    Plane a(p.begin() + k * h * w, p.begin() + (k + 1) * h * w);
    Plane b(t.begin() + k * h * w, t.begin() + (k + 1) * h * w);
    total += ms_ssim_plane(std::move(a), std::move(b), h, w, data_range);
  }
  return total / static_cast<double>(planes);
}

MetricsRow frame_metrics(const Tensor<float>& pred, const Tensor<float>& truth, double data_range) {
  MetricsRow r;
  const auto e = pointwise_errors(pred, truth);
  r.mae = e.mae;
  r.bias = e.bias;
  r.f1_12 = f1_at_threshold(pred, truth, 12.0);
  r.f1_18 = f1_at_threshold(pred, truth, 18.0);
  r.f1_23 = f1_at_threshold(pred, truth, 23.0);
  r.ms_ssim = ms_ssim(pred, truth, data_range);
  r.psnr = psnr(pred, truth, data_range);
  return r;
}

namespace {

void accumulate(MetricsRow& acc, const MetricsRow& r) {
  acc.mae += r.mae;
  acc.f1_12 += r.f1_12;
  acc.f1_18 += r.f1_18;
  acc.f1_23 += r.f1_23;
  acc.bias += r.bias;
  acc.ms_ssim += r.ms_ssim;
  acc.psnr += r.psnr;
}

void divide(MetricsRow& acc, double n) {
  for (double* v : {&acc.mae, &acc.f1_12, &acc.f1_18, &acc.f1_23, &acc.bias, &acc.ms_ssim, &acc.psnr})
    *v = n > 0 ? *v / n : std::numeric_limits<double>::quiet_NaN();
}

Tensor<float> frame_of(const Tensor<float>& seq, std::int64_t k) {
  const auto& s = seq.shape();
  const std::int64_t plane = s[1] * s[2];
  std::vector<float> v(seq.data().begin() + k * plane, seq.data().begin() + (k + 1) * plane);
  return Tensor<float>({s[1], s[2]}, std::move(v));
}

}  // namespace

MetricsReport evaluate_run(const std::vector<Tensor<float>>& forecasts, const std::vector<Tensor<float>>& truths,
                           const std::vector<int>& lead_minutes, double data_range) {
  if (forecasts.size() != truths.size() || forecasts.empty())
    throw ConfigError("evaluate_run needs equally many (non-zero) forecasts and truths");
  const auto t_out = static_cast<std::int64_t>(lead_minutes.size());
  for (std::size_t i = 0; i < forecasts.size(); ++i) {
    if (forecasts[i].rank() != 3 || forecasts[i].shape()[0] != t_out)
      throw ConfigError("forecast " + std::to_string(i) + " does not match the lead grid of " +
                        std::to_string(t_out) + " steps");
    require_same(forecasts[i], truths[i], "evaluate_run");
  }
  for (std::size_t k = 1; k < lead_minutes.size(); ++k)
    if (lead_minutes[k] <= lead_minutes[k - 1]) throw ConfigError("lead minutes must be strictly increasing");

  // per_frame[k][i]: lead k, sample i
  std::vector<std::vector<MetricsRow>> per_frame(static_cast<std::size_t>(t_out));
  for (std::int64_t k = 0; k < t_out; ++k)
    for (std::size_t i = 0; i < forecasts.size(); ++i)
      per_frame[k].push_back(frame_metrics(frame_of(forecasts[i], k), frame_of(truths[i], k), data_range));

  MetricsReport rep;
  rep.lead_minutes = lead_minutes;
  rep.agg_0_2h.label = "agg_0_2h";
  rep.agg_0_6h.label = "agg_0_6h";
  double n_2h = 0, n_6h = 0;
  for (std::int64_t k = 0; k < t_out; ++k) {
    MetricsRow row;
    row.label = std::to_string(lead_minutes[k]);
    for (const auto& r : per_frame[k]) {
      accumulate(row, r);
      accumulate(rep.agg_0_6h, r);
      n_6h += 1;
      if (lead_minutes[k] <= 120) {
        accumulate(rep.agg_0_2h, r);
        n_2h += 1;
      }
    }
    divide(row, static_cast<double>(per_frame[k].size()));
    rep.rows.push_back(row);
  }
  divide(rep.agg_0_2h, n_2h);
  divide(rep.agg_0_6h, n_6h);
  return rep;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "lead_min,mae,f1_12,f1_18,f1_23,bias,ms_ssim,psnr\n";
  os << std::setprecision(17);
  auto emit = [&](const MetricsRow& r) {
    os << r.label << ',' << r.mae << ',' << r.f1_12 << ',' << r.f1_18 << ',' << r.f1_23 << ',' << r.bias << ','
       << r.ms_ssim << ',' << r.psnr << '\n';
  };
  for (const auto& r : rows) emit(r);
  emit(agg_0_2h);
  emit(agg_0_6h);
  return os.str();
}

MetricsReport MetricsReport::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("lead_min,", 0) != 0) throw ConfigError("metrics CSV lacks header");
  MetricsReport rep;
  bool have_2h = false, have_6h = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw ConfigError("metrics CSV row has " + std::to_string(cells.size()) + " columns");
    MetricsRow r;
    r.label = cells[0];
    double* fields[] = {&r.mae, &r.f1_12, &r.f1_18, &r.f1_23, &r.bias, &r.ms_ssim, &r.psnr};
    for (int c = 0; c < 7; ++c) *fields[c] = std::stod(cells[c + 1]);
    if (r.label == "agg_0_2h") { rep.agg_0_2h = r; have_2h = true; }
    else if (r.label == "agg_0_6h") { rep.agg_0_6h = r; have_6h = true; }
    else {
      rep.lead_minutes.push_back(std::stoi(r.label));
      rep.rows.push_back(r);
    }
  }
  if (!have_2h || !have_6h) throw ConfigError("metrics CSV lacks aggregate rows");
  return rep;
}

}  // namespace nowcast
