#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nowcast/autodiff.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast {

enum class ConvAlgorithm { im2col, direct };

// x[B,Cin,H,W] * weight[Cout,Cin,k,k] + bias[Cout], zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int padding, ConvAlgorithm algo = ConvAlgorithm::im2col);

// Transposed convolution; weight is [Cin,Cout,k,k]. Output side is
// (H-1)*stride - 2*padding + k.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           int stride, int padding);

std::int64_t conv_output_size(std::int64_t in, int kernel, int stride, int padding);
std::int64_t conv_transpose_output_size(std::int64_t in, int kernel, int stride, int padding);

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5);

struct Activation {
  enum class Kind { leaky_relu, sigmoid, tanh, identity };
  Kind kind = Kind::identity;
  double slope = 0.2;

  static Activation leaky_relu(double slope) { return {Kind::leaky_relu, slope}; }
  static Activation sigmoid() { return {Kind::sigmoid, 0.0}; }
  static Activation tanh() { return {Kind::tanh, 0.0}; }
};

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation act);
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope) {
  return activation(x, Activation::leaky_relu(slope));
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return activation(x, Activation::sigmoid());
}
template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return activation(x, Activation::tanh());
}

enum class Elementwise { add, sub, mul };

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Elementwise kind);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, Elementwise::add);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, Elementwise::sub);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, Elementwise::mul);
}

// Concatenates [B,Ci,H,W] parts along the channel axis, in argument order.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
// Channels [begin, begin+count) of x[B,C,H,W].
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t begin, std::int64_t count);

// x[B,T,C,H,W] -> frame t as [B,C,H,W].
template <typename T>
Tensor<T> time_frame(const Tensor<T>& x, std::int64_t t);
// frames[t] of shape [B,C,H,W] -> [B,T,C,H,W].
template <typename T>
Tensor<T> stack_time(const std::vector<Tensor<T>>& frames);

// out[:,0] = sum_i w[i] * hs[:,i]; hs is [B,m,C,H,W], result [B,1,C,H,W].
template <typename T>
Tensor<T> temporal_weighted_sum(const Tensor<T>& hs, const Tensor<T>& w);

// Resamples x[B,K,C,H,W] to T_out frames on a uniform grid spanning the
// same interval, endpoints preserved, piecewise linear in between.
template <typename T>
Tensor<T> temporal_linear_interp(const Tensor<T>& x, std::int64_t t_out);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

}  // namespace nowcast
