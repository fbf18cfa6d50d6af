#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "nowcast/tensor.hpp"

namespace nowcast::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  return m;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

// Straight nested-loop correlation, independent of the library kernels.
inline std::vector<double> naive_conv2d(const std::vector<double>& x, int cin, int h, int w,
                                        const std::vector<double>& wt, int cout, int k, int stride,
                                        int pad, int& oh, int& ow) {
  oh = (h + 2 * pad - k) / stride + 1;
  ow = (w + 2 * pad - k) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(cout * oh * ow), 0.0);
  for (int co = 0; co < cout; ++co)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double acc = 0;
        for (int ci = 0; ci < cin; ++ci)
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) {
              const int r = i * stride - pad + a, c = j * stride - pad + b;
              if (r < 0 || r >= h || c < 0 || c >= w) continue;
              acc += wt[((co * cin + ci) * k + a) * k + b] * x[(ci * h + r) * w + c];
            }
        y[(co * oh + i) * ow + j] = acc;
      }
  return y;
}

}  // namespace nowcast::testing
