#pragma once

// Small raster helpers on row-major [H, W] float planes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace nowcast::detail {

// Bilinear sample at continuous pixel coordinates; outside the grid reads as zero.
inline float bilinear_zero(std::span<const float> img, std::int64_t h, std::int64_t w, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto x0 = static_cast<std::int64_t>(fx), y0 = static_cast<std::int64_t>(fy);
  const double ax = x - fx, ay = y - fy;
  auto at = [&](std::int64_t yy, std::int64_t xx) -> double {
    if (xx < 0 || yy < 0 || xx >= w || yy >= h) return 0.0;
    return img[static_cast<std::size_t>(yy * w + xx)];
  };
  const double top = (1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1);
  const double bot = (1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1);
  return static_cast<float>((1 - ay) * top + ay * bot);
}

// Bilinear sample with clamp-to-edge, used inside the flow pyramid.
inline double bilinear_clamp(std::span<const double> img, std::int64_t h, std::int64_t w, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(x), w - 1);
  const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(y), h - 1);
  const auto x1 = std::min<std::int64_t>(x0 + 1, w - 1), y1 = std::min<std::int64_t>(y0 + 1, h - 1);
  const double ax = x - static_cast<double>(x0), ay = y - static_cast<double>(y0);
  const double top = (1 - ax) * img[y0 * w + x0] + ax * img[y0 * w + x1];
  const double bot = (1 - ax) * img[y1 * w + x0] + ax * img[y1 * w + x1];
  return (1 - ay) * top + ay * bot;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    total += k[i + radius];
  }
  for (auto& v : k) v /= total;
  return k;
}

// Separable Gaussian blur with edge replication.
template <typename T>
std::vector<T> gaussian_blur(std::span<const T> img, std::int64_t h, std::int64_t w, double sigma) {
  std::vector<T> out(img.begin(), img.end());
  if (sigma <= 0) return out;
  const auto k = gaussian_kernel(sigma);
  const auto r = static_cast<std::int64_t>(k.size() / 2);
  std::vector<T> tmp(out.size());
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::int64_t i = -r; i <= r; ++i)
        s += k[i + r] * img[y * w + std::clamp<std::int64_t>(x + i, 0, w - 1)];
      tmp[y * w + x] = static_cast<T>(s);
    }
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::int64_t i = -r; i <= r; ++i)
        s += k[i + r] * tmp[std::clamp<std::int64_t>(y + i, 0, h - 1) * w + x];
      out[y * w + x] = static_cast<T>(s);
    }
  return out;
}

}  // namespace nowcast::detail
