#include "nowcast/baselines.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "detail/image.hpp"
#include "nowcast/errors.hpp"

namespace nowcast {

namespace {

struct Image {
  std::int64_t h = 0, w = 0;
  std::vector<double> px;
  double at(std::int64_t y, std::int64_t x) const {
    return px[static_cast<std::size_t>(std::clamp<std::int64_t>(y, 0, h - 1) * w + std::clamp<std::int64_t>(x, 0, w - 1))];
  }
};

Image to_image(const Tensor<float>& t) {
  if (t.rank() != 2) throw ConfigError("expected an [H,W] frame, got " + to_string(t.shape()));
  Image im{t.shape()[0], t.shape()[1], {}};
  im.px.assign(t.data().begin(), t.data().end());
  return im;
}

// Blur then decimate by two.
Image pyr_down(const Image& src) {
  auto blurred = detail::gaussian_blur<double>(src.px, src.h, src.w, 1.0);
  Image out{std::max<std::int64_t>(1, src.h / 2), std::max<std::int64_t>(1, src.w / 2), {}};
  out.px.resize(static_cast<std::size_t>(out.h * out.w));
  for (std::int64_t y = 0; y < out.h; ++y)
    for (std::int64_t x = 0; x < out.w; ++x) {
      const auto y0 = std::min(2 * y, src.h - 1), y1 = std::min(2 * y + 1, src.h - 1);
      const auto x0 = std::min(2 * x, src.w - 1), x1 = std::min(2 * x + 1, src.w - 1);
      out.px[y * out.w + x] = 0.25 * (blurred[y0 * src.w + x0] + blurred[y0 * src.w + x1] +
                                      blurred[y1 * src.w + x0] + blurred[y1 * src.w + x1]);
    }
  return out;
}

// Box sum over a (2r+1)^2 window with clamped extent, via an integral image.
std::vector<double> box_sum(const std::vector<double>& v, std::int64_t h, std::int64_t w, std::int64_t r) {
  std::vector<double> integral(static_cast<std::size_t>((h + 1) * (w + 1)), 0.0);
  for (std::int64_t y = 0; y < h; ++y) {
    double row = 0.0;
    for (std::int64_t x = 0; x < w; ++x) {
      row += v[y * w + x];
      integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
    }
  }
  std::vector<double> out(v.size());
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const auto y0 = std::max<std::int64_t>(0, y - r), y1 = std::min(h, y + r + 1);
      const auto x0 = std::max<std::int64_t>(0, x - r), x1 = std::min(w, x + r + 1);
      out[y * w + x] = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0] +
                       integral[y0 * (w + 1) + x0];
    }
  return out;
}

// Lucas-Kanade with a per-window gain: f1(x + u) ~ (1 + alpha) f0(x). The gain soaks
// up growth and decay that would otherwise be read as divergent motion; only u, v are kept.
void refine(const Image& f0, const Image& f1, std::vector<double>& u, std::vector<double>& v,
            const FlowOptions& opts) {
  const auto h = f0.h, w = f0.w;
  const auto n = static_cast<std::size_t>(h * w);
  const std::int64_t r = opts.window / 2;
  // Template gradients only, so the normal matrix is fixed across iterations.
  std::vector<double> gx(n), gy(n);
  std::vector<std::vector<double>> prod(6, std::vector<double>(n));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y * w + x);
      gx[i] = 0.5 * (f0.at(y, x + 1) - f0.at(y, x - 1));
      gy[i] = 0.5 * (f0.at(y + 1, x) - f0.at(y - 1, x));
      const double f = f0.px[i];
      prod[0][i] = gx[i] * gx[i];
      prod[1][i] = gx[i] * gy[i];
      prod[2][i] = -gx[i] * f;
      prod[3][i] = gy[i] * gy[i];
      prod[4][i] = -gy[i] * f;
      prod[5][i] = f * f;
    }
  std::vector<std::vector<double>> sums;
  for (const auto& p : prod) sums.push_back(box_sum(p, h, w, r));
  // Tikhonov term relative to the strongest structure in the frame, so weak
  // tails and flat areas fall back to zero flow instead of aperture noise.
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) peak = std::max(peak, sums[0][i] + sums[3][i]);
  const double lambda = opts.regularization * peak + 1e-12;

  // Each pixel runs its own Gauss-Newton loop on a window warped by that pixel's flow.
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y * w + x);
      Eigen::Matrix3d H;
      H << sums[0][i] + lambda, sums[1][i], sums[2][i],
           sums[1][i], sums[3][i] + lambda, sums[4][i],
           sums[2][i], sums[4][i], sums[5][i] * (1.0 + opts.regularization) + 1e-12;
      const Eigen::LDLT<Eigen::Matrix3d> solver(H);
      if (solver.info() != Eigen::Success) continue;
      const auto y0 = std::max<std::int64_t>(0, y - r), y1 = std::min(h, y + r + 1);
      const auto x0 = std::max<std::int64_t>(0, x - r), x1 = std::min(w, x + r + 1);
      double gain = 0.0;
      // Residual energy and J^T r at displacement (pu, pv) and gain pg.
      auto evaluate = [&](double pu, double pv, double pg, Eigen::Vector3d& jr) {
        double e = 0.0;
        jr.setZero();
        for (std::int64_t yy = y0; yy < y1; ++yy)
          for (std::int64_t xx = x0; xx < x1; ++xx) {
            const auto j = static_cast<std::size_t>(yy * w + xx);
            const double res = detail::bilinear_clamp(f1.px, h, w, xx + pu, yy + pv) - (1.0 + pg) * f0.px[j];
            jr[0] += gx[j] * res;
            jr[1] += gy[j] * res;
            jr[2] -= f0.px[j] * res;
            e += res * res;
          }
        return e;
      };
      Eigen::Vector3d jr;
      double energy = evaluate(u[i], v[i], gain, jr);
      for (int it = 0; it < opts.iterations; ++it) {
        Eigen::Vector3d step = -solver.solve(jr);
        if (!step.allFinite()) break;
        const double len = std::hypot(step[0], step[1]);
        if (len > opts.max_update) step *= opts.max_update / len;
        // Backtrack until the step lowers the window residual.
        bool accepted = false;
        for (int halving = 0; halving < 4 && !accepted; ++halving) {
          Eigen::Vector3d next_jr;
          const double e = evaluate(u[i] + step[0], v[i] + step[1], gain + step[2], next_jr);
          if (e < energy) {
            u[i] += step[0];
            v[i] += step[1];
            gain += step[2];
            energy = e;
            jr = next_jr;
            accepted = true;
          } else {
            step *= 0.5;
          }
        }
        if (!accepted || std::hypot(step[0], step[1]) < 1e-4) break;
      }
    }
}

}  // namespace

Tensor<float> persistence_forecast(const Tensor<float>& last_frame, int t_out) {
  if (last_frame.rank() != 2) throw ConfigError("persistence expects an [H,W] frame");
  if (t_out < 1) throw ConfigError("t_out must be positive");
  const auto& s = last_frame.shape();
  Tensor<float> out = Tensor<float>::zeros({t_out, s[0], s[1]});
  auto dst = out.mutable_data();
  const auto src = last_frame.data();
  for (int k = 0; k < t_out; ++k) std::copy(src.begin(), src.end(), dst.begin() + k * src.size());
  return out;
}

FlowField estimate_flow(const Tensor<float>& f0, const Tensor<float>& f1, int levels, int window) {
  FlowOptions opts;
  opts.levels = levels;
  opts.window = window;
  return estimate_flow(f0, f1, opts);
}

FlowField estimate_flow(const Tensor<float>& f0, const Tensor<float>& f1, const FlowOptions& opts) {
  if (f0.shape() != f1.shape()) throw ConfigError("estimate_flow: frame shapes differ");
  if (opts.levels < 1 || opts.window < 1 || opts.iterations < 1)
    throw ConfigError("estimate_flow: levels, window and iterations must be positive");
  std::vector<Image> p0{to_image(f0)}, p1{to_image(f1)};
  for (int l = 1; l < opts.levels && std::min(p0.back().h, p0.back().w) >= 8; ++l) {
    p0.push_back(pyr_down(p0.back()));
    p1.push_back(pyr_down(p1.back()));
  }
  std::vector<double> u, v;
  for (auto l = static_cast<std::ptrdiff_t>(p0.size()) - 1; l >= 0; --l) {
    const auto& im = p0[static_cast<std::size_t>(l)];
    std::vector<double> nu(static_cast<std::size_t>(im.h * im.w), 0.0), nv(nu.size(), 0.0);
    if (!u.empty()) {
      const auto& coarse = p0[static_cast<std::size_t>(l + 1)];
      for (std::int64_t y = 0; y < im.h; ++y)
        for (std::int64_t x = 0; x < im.w; ++x) {
          const double cx = (x + 0.5) / 2.0 - 0.5, cy = (y + 0.5) / 2.0 - 0.5;
          nu[y * im.w + x] = 2.0 * detail::bilinear_clamp(u, coarse.h, coarse.w, cx, cy);
          nv[y * im.w + x] = 2.0 * detail::bilinear_clamp(v, coarse.h, coarse.w, cx, cy);
        }
    }
    u = std::move(nu);
    v = std::move(nv);
    refine(im, p1[static_cast<std::size_t>(l)], u, v, opts);
  }
  const auto& s = f0.shape();
  FlowField flow{Tensor<float>::zeros(s), Tensor<float>::zeros(s)};
  auto du = flow.u.mutable_data(), dv = flow.v.mutable_data();
  for (std::size_t i = 0; i < u.size(); ++i) {
    du[i] = std::isfinite(u[i]) ? static_cast<float>(u[i]) : 0.0f;
    dv[i] = std::isfinite(v[i]) ? static_cast<float>(v[i]) : 0.0f;
  }
  return flow;
}

FlowField scale_flow(const FlowField& flow, double factor) {
  FlowField out{flow.u.clone(), flow.v.clone()};
  for (auto& x : out.u.mutable_data()) x = static_cast<float>(x * factor);
  for (auto& x : out.v.mutable_data()) x = static_cast<float>(x * factor);
  return out;
}

Tensor<float> advect(const Tensor<float>& frame, const FlowField& flow) {
  if (frame.rank() != 2 || flow.u.shape() != frame.shape() || flow.v.shape() != frame.shape())
    throw ConfigError("advect: frame and flow shapes differ");
  const auto h = frame.shape()[0], w = frame.shape()[1];
  Tensor<float> out = Tensor<float>::zeros(frame.shape());
  auto dst = out.mutable_data();
  const auto src = frame.data(), u = flow.u.data(), v = flow.v.data();
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y * w + x);
      dst[i] = detail::bilinear_zero(src, h, w, static_cast<double>(x) - u[i], static_cast<double>(y) - v[i]);
    }
  return out;
}

Tensor<float> optical_flow_forecast(const Tensor<float>& previous, const Tensor<float>& last, int t_out,
                                    double cadence_ratio, const FlowOptions& opts) {
  if (t_out < 1) throw ConfigError("t_out must be positive");
  const FlowField flow = scale_flow(estimate_flow(previous, last, opts), cadence_ratio);
  const auto& s = last.shape();
  Tensor<float> out = Tensor<float>::zeros({t_out, s[0], s[1]});
  auto dst = out.mutable_data();
  Tensor<float> cur = last;
  for (int k = 0; k < t_out; ++k) {
    cur = advect(cur, flow);
    const auto c = cur.data();
    std::copy(c.begin(), c.end(), dst.begin() + k * c.size());
  }
  return out;
}

}  // namespace nowcast
